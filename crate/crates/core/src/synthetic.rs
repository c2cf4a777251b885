//! Seeded synthetic gazetteer and mention corpus.
//!
//! Produces a small invented world (countries, admin1 regions, cities) and
//! user-style mentions made by corrupting the locations' names with casing,
//! punctuation and affix noise. Optionally a fraction of mentions is replaced
//! by off-topic text. The world can be rendered as GeoNames-shaped files so it
//! also exercises the ingestion path.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gazetteer::{Granularity, LocationEntity};
use crate::mentions::LabeledMention;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub countries: usize,
    pub admin1_per_country: usize,
    pub cities: usize,
    pub mentions: usize,
    /// Fraction of mentions replaced by off-topic text, in [0, 1).
    pub noise_fraction: f64,
    /// Cities under the population cut added to the rendered dump only.
    pub small_cities: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    /// 200 locations (10 countries, 30 admin1, 160 cities) and 2,000 mentions.
    fn default() -> Self {
        SyntheticConfig {
            countries: 10,
            admin1_per_country: 3,
            cities: 160,
            mentions: 2_000,
            noise_fraction: 0.0,
            small_cities: 20,
            seed: 20_240_601,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    /// The target database (already filtered).
    pub entities: Vec<LocationEntity>,
    /// Cities below the population cut; present only in the rendered dump.
    pub small_cities: Vec<LocationEntity>,
    pub mentions: Vec<LabeledMention>,
    /// Which mentions were replaced by off-topic noise.
    pub is_noise: Vec<bool>,
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr", "st", "tr",
    "sh", "ch",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ei", "ou"];
const CODAS: &[&str] = &["", "", "", "n", "r", "s", "l", "m"];

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut s = String::new();
    for i in 0..syllables {
        s.push_str(ONSETS.choose(rng).unwrap());
        s.push_str(VOWELS.choose(rng).unwrap());
        if i + 1 == syllables {
            s.push_str(CODAS.choose(rng).unwrap());
        }
    }
    let mut c = s.chars();
    let first = c.next().unwrap().to_ascii_uppercase();
    std::iter::once(first).chain(c).collect()
}

fn unique_word(rng: &mut ChaCha8Rng, used: &mut HashSet<String>, lo: usize, hi: usize) -> String {
    loop {
        let n = rng.gen_range(lo..=hi);
        let w = word(rng, n);
        if used.insert(w.to_lowercase()) {
            return w;
        }
    }
}

fn unique_code(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    loop {
        let c: String = (0..2).map(|_| rng.gen_range(b'A'..=b'Z') as char).collect();
        if used.insert(c.clone()) {
            return c;
        }
    }
}

const AFFIX_BEFORE: &[&str] = &[
    "📍 ",
    "I live in ",
    "#",
    "~ ",
    "from ",
    "🏠 ",
    "Somewhere in ",
];
const AFFIX_AFTER: &[&str] = &[
    " ❤",
    " born & raised",
    "!!",
    " 🌍",
    " | she/her",
    " baby",
    " 🇺🇳",
    "...",
];
const OFF_TOPIC: &[&str] = &[
    "Worldwide",
    "in your heart",
    "the moon",
    "everywhere & nowhere",
    "hell",
    "Earth",
    "my own world",
    "on the internet",
    "🌈✨",
    "wherever the wifi is",
    "404 not found",
    "Paris/Singapore",
];

fn corrupt(rng: &mut ChaCha8Rng, base: &str) -> String {
    let mut s = match rng.gen_range(0..4) {
        0 => base.to_uppercase(),
        1 => base.to_lowercase(),
        2 => base.to_string(),
        _ => base
            .chars()
            .map(|c| {
                if c.is_alphabetic() && rng.gen_bool(0.5) {
                    c.to_ascii_uppercase()
                } else {
                    c
                }
            })
            .collect(),
    };
    if rng.gen_bool(0.4) {
        let sep = ["", " ", "/", " - ", "."].choose(rng).unwrap();
        s = s.replace(", ", sep);
    }
    if rng.gen_bool(0.35) {
        s = format!("{}{s}", AFFIX_BEFORE.choose(rng).unwrap());
    }
    if rng.gen_bool(0.35) {
        s.push_str(AFFIX_AFTER.choose(rng).unwrap());
    }
    s
}

/// Ways users name a location, before corruption.
fn surface_forms(e: &LocationEntity) -> Vec<String> {
    match e.granularity {
        Granularity::Country => vec![e.name.clone(), e.country_code.clone(), e.name.clone()],
        Granularity::Admin1 => vec![
            e.admin1_name.clone(),
            format!("{}, {}", e.admin1_name, e.country_name),
            format!("{}, {}", e.admin1_name, e.country_code),
        ],
        Granularity::City => vec![
            e.name.clone(),
            format!("{}, {}", e.name, e.admin1_name),
            format!("{}, {}", e.name, e.country_name),
            format!("{}, {}", e.name, e.country_code),
        ],
    }
}

pub fn generate(config: &SyntheticConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut names = HashSet::new();
    let mut codes = HashSet::new();
    let mut next_id = 1_000_000u64;
    let mut id = || {
        next_id += 1;
        next_id
    };
    let mut entities = Vec::new();
    let mut admin1s: Vec<usize> = Vec::new();
    for _ in 0..config.countries {
        let country = unique_word(&mut rng, &mut names, 2, 3);
        let cc = unique_code(&mut rng, &mut codes);
        let (lat, lon) = (rng.gen_range(-60.0..60.0), rng.gen_range(-170.0..170.0));
        entities.push(LocationEntity {
            entity_id: id(),
            name: country.clone(),
            ascii_name: country.clone(),
            latitude: lat,
            longitude: lon,
            granularity: Granularity::Country,
            country_code: cc.clone(),
            country_name: country.clone(),
            admin1_code: "00".into(),
            admin1_name: String::new(),
            admin2_name: String::new(),
            population: rng.gen_range(1_000_000..90_000_000),
        });
        for a in 0..config.admin1_per_country {
            let admin = unique_word(&mut rng, &mut names, 2, 3);
            admin1s.push(entities.len());
            entities.push(LocationEntity {
                entity_id: id(),
                name: admin.clone(),
                ascii_name: admin.clone(),
                latitude: lat + rng.gen_range(-3.0..3.0),
                longitude: lon + rng.gen_range(-3.0..3.0),
                granularity: Granularity::Admin1,
                country_code: cc.clone(),
                country_name: country.clone(),
                admin1_code: format!("{:02}", a + 1),
                admin1_name: admin,
                admin2_name: String::new(),
                population: rng.gen_range(100_000..5_000_000),
            });
        }
    }
    let make_city =
        |rng: &mut ChaCha8Rng, names: &mut HashSet<String>, id: u64, population: u64| {
            let parent = &entities[*admin1s.choose(rng).unwrap()];
            let name = unique_word(rng, names, 2, 4);
            LocationEntity {
                entity_id: id,
                ascii_name: name.clone(),
                name,
                latitude: (parent.latitude + rng.gen_range(-1.0..1.0)).clamp(-90.0, 90.0),
                longitude: (parent.longitude + rng.gen_range(-1.0..1.0)).clamp(-180.0, 180.0),
                granularity: Granularity::City,
                country_code: parent.country_code.clone(),
                country_name: parent.country_name.clone(),
                admin1_code: parent.admin1_code.clone(),
                admin1_name: parent.admin1_name.clone(),
                admin2_name: String::new(),
                population,
            }
        };
    let mut cities = Vec::new();
    for _ in 0..config.cities {
        let pop = rng.gen_range(15_000..3_000_000);
        let i = id();
        cities.push(make_city(&mut rng, &mut names, i, pop));
    }
    let mut small_cities = Vec::new();
    for _ in 0..config.small_cities {
        let pop = rng.gen_range(100..15_000);
        let i = id();
        small_cities.push(make_city(&mut rng, &mut names, i, pop));
    }
    entities.extend(cities);

    // Heavy-tailed popularity so mention counts spread over several buckets.
    let weights: Vec<f64> = (0..entities.len())
        .map(|_| 1.0 / rng.gen_range(1.0f64..40.0))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut mentions = Vec::with_capacity(config.mentions);
    let mut is_noise = Vec::with_capacity(config.mentions);
    for _ in 0..config.mentions {
        let mut pick = rng.gen_range(0.0..total);
        let mut li = 0;
        while li + 1 < weights.len() && pick >= weights[li] {
            pick -= weights[li];
            li += 1;
        }
        let e = &entities[li];
        let noise = rng.gen_bool(config.noise_fraction.clamp(0.0, 1.0));
        let text = if noise {
            OFF_TOPIC.choose(&mut rng).unwrap().to_string()
        } else {
            let forms = surface_forms(e);
            let base = forms.choose(&mut rng).unwrap().clone();
            corrupt(&mut rng, &base)
        };
        mentions.push(LabeledMention::new(text, e.triple()).expect("non-null truth"));
        is_noise.push(noise);
    }
    SyntheticCorpus {
        entities,
        small_cities,
        mentions,
        is_noise,
    }
}

impl SyntheticCorpus {
    /// GeoNames main-dump lines for every entity, small cities included.
    pub fn geonames_dump(&self) -> String {
        let mut out = String::new();
        for e in self.entities.iter().chain(&self.small_cities) {
            let (class, code) = match e.granularity {
                Granularity::Country => ("A", "PCLI"),
                Granularity::Admin1 => ("A", "ADM1"),
                Granularity::City => ("P", "PPL"),
            };
            let admin1 = if e.granularity == Granularity::Country {
                "00"
            } else {
                &e.admin1_code
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t\t{:.5}\t{:.5}\t{class}\t{code}\t{}\t\t{admin1}\t\t\t\t{}\t\t0\tEtc/UTC\t2024-01-01",
                e.entity_id,
                e.name,
                e.ascii_name,
                e.latitude,
                e.longitude,
                e.country_code,
                e.population
            );
        }
        out
    }

    /// `CC.A1<TAB>name<TAB>asciiname<TAB>id` lines.
    pub fn admin1_codes(&self) -> String {
        let mut out = String::new();
        for e in self
            .entities
            .iter()
            .filter(|e| e.granularity == Granularity::Admin1)
        {
            let _ = writeln!(
                out,
                "{}.{}\t{}\t{}\t{}",
                e.country_code, e.admin1_code, e.admin1_name, e.admin1_name, e.entity_id
            );
        }
        out
    }

    /// countryInfo-style table with a comment header.
    pub fn country_info(&self) -> String {
        let mut out = String::from("#ISO\tISO3\tISO-Numeric\tfips\tCountry\tCapital\n");
        for e in self
            .entities
            .iter()
            .filter(|e| e.granularity == Granularity::Country)
        {
            let _ = writeln!(
                out,
                "{}\t{}X\t000\t{}\t{}\t",
                e.country_code, e.country_code, e.country_code, e.name
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gazetteer::{
        CodeTables, GazetteerConfig, GranularityCounts, filter_entities, parse_gazetteer,
    };

    #[test]
    fn default_shape() {
        let c = generate(&SyntheticConfig::default());
        assert_eq!(c.entities.len(), 200);
        assert_eq!(c.mentions.len(), 2000);
        let counts = GranularityCounts::of(&c.entities);
        assert_eq!(
            (counts.countries, counts.admin1, counts.cities),
            (10, 30, 160)
        );
        assert!(c.is_noise.iter().all(|n| !n));
    }

    #[test]
    fn deterministic() {
        let a = generate(&SyntheticConfig::default());
        let b = generate(&SyntheticConfig::default());
        assert_eq!(a.entities, b.entities);
        assert_eq!(a.mentions, b.mentions);
    }

    #[test]
    fn noise_fraction_is_roughly_honored() {
        let c = generate(&SyntheticConfig {
            noise_fraction: 0.2,
            ..SyntheticConfig::default()
        });
        let f = c.is_noise.iter().filter(|n| **n).count() as f64 / c.is_noise.len() as f64;
        assert!((0.15..0.25).contains(&f), "noise {f}");
    }

    #[test]
    fn rendered_files_parse_back_to_the_database() {
        let c = generate(&SyntheticConfig::default());
        let tables = CodeTables::parse(
            c.country_info().as_bytes(),
            c.admin1_codes().as_bytes(),
            None::<&[u8]>,
        )
        .unwrap();
        let cfg = GazetteerConfig::default();
        let parsed = parse_gazetteer(c.geonames_dump().as_bytes(), &tables, &cfg).unwrap();
        assert_eq!(parsed.stats.malformed, 0);
        assert_eq!(parsed.entities.len(), 220);
        let filtered = filter_entities(&parsed.entities, &cfg);
        let got: HashSet<_> = filtered.iter().map(|e| e.triple()).collect();
        let want: HashSet<_> = c.entities.iter().map(|e| e.triple()).collect();
        assert_eq!(got, want);
    }
}
