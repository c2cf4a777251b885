//! GeoNames-style gazetteer ingestion and the target location database.
//!
//! A raw dump is classified into three granularities (country, first-level
//! administrative region, city) by feature class/code, code columns are
//! resolved to names through the auxiliary tables, and small cities are
//! filtered out. Every surviving entity maps to exactly one [`LocationTriple`].

use std::cmp::Ordering;
use std::collections::HashMap;
use std::collections::hash_map::Entry;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Granularity {
    Country,
    Admin1,
    City,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Country => "country",
            Granularity::Admin1 => "admin1",
            Granularity::City => "city",
        }
    }
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "country" => Ok(Granularity::Country),
            "admin1" => Ok(Granularity::Admin1),
            "city" => Ok(Granularity::City),
            other => Err(Error::InvalidArgument(format!(
                "unknown granularity {other:?}"
            ))),
        }
    }
}

/// Normalized `(city, admin1, country)` identity. All-empty is Null.
///
/// Components are stored in canonical form (see [`normalize`]), so equality
/// is the string match used throughout evaluation. Ordering is lexicographic
/// on `(country, admin1, city)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LocationTriple {
    city: String,
    admin1: String,
    country: String,
}

impl LocationTriple {
    /// Normalizes each component and checks the hierarchical fill rule.
    pub fn new(city: &str, admin1: &str, country: &str) -> Result<Self> {
        let triple = LocationTriple {
            city: normalize(city),
            admin1: normalize(admin1),
            country: normalize(country),
        };
        if (!triple.city.is_empty() && triple.admin1.is_empty())
            || (!triple.admin1.is_empty() && triple.country.is_empty())
        {
            return Err(Error::InvalidArgument(format!(
                "triple {triple} leaves a higher level empty"
            )));
        }
        Ok(triple)
    }

    pub fn null() -> Self {
        LocationTriple::default()
    }

    pub fn is_null(&self) -> bool {
        self.city.is_empty() && self.admin1.is_empty() && self.country.is_empty()
    }

    pub fn city(&self) -> &str {
        &self.city
    }

    pub fn admin1(&self) -> &str {
        &self.admin1
    }

    pub fn country(&self) -> &str {
        &self.country
    }

    pub fn granularity(&self) -> Option<Granularity> {
        if !self.city.is_empty() {
            Some(Granularity::City)
        } else if !self.admin1.is_empty() {
            Some(Granularity::Admin1)
        } else if !self.country.is_empty() {
            Some(Granularity::Country)
        } else {
            None
        }
    }
}

impl Ord for LocationTriple {
    fn cmp(&self, other: &Self) -> Ordering {
        (&self.country, &self.admin1, &self.city).cmp(&(&other.country, &other.admin1, &other.city))
    }
}

impl PartialOrd for LocationTriple {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for LocationTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({:?}, {:?}, {:?})",
            self.city, self.admin1, self.country
        )
    }
}

/// One gazetteer row after code resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationEntity {
    pub entity_id: u64,
    pub name: String,
    pub ascii_name: String,
    pub latitude: f64,
    pub longitude: f64,
    pub granularity: Granularity,
    pub country_code: String,
    pub country_name: String,
    pub admin1_code: String,
    pub admin1_name: String,
    pub admin2_name: String,
    pub population: u64,
}

impl LocationEntity {
    /// Display-form city name; empty above city level.
    pub fn city_name(&self) -> &str {
        match self.granularity {
            Granularity::City => &self.name,
            _ => "",
        }
    }

    /// Display-form admin1 name; empty for countries.
    pub fn admin1_display(&self) -> &str {
        match self.granularity {
            Granularity::Country => "",
            _ => &self.admin1_name,
        }
    }

    /// Display-form admin2 name; only cities carry one.
    pub fn admin2_display(&self) -> &str {
        match self.granularity {
            Granularity::City => &self.admin2_name,
            _ => "",
        }
    }

    pub fn triple(&self) -> LocationTriple {
        LocationTriple {
            city: normalize(self.city_name()),
            admin1: normalize(self.admin1_display()),
            country: normalize(&self.country_name),
        }
    }
}

/// Feature class/code rules that decide an entity's granularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureCodeMap {
    /// Feature class for countries and admin regions (GeoNames `A`).
    pub admin_class: String,
    pub country_codes: Vec<String>,
    pub admin1_codes: Vec<String>,
    pub city_classes: Vec<String>,
}

impl Default for FeatureCodeMap {
    fn default() -> Self {
        FeatureCodeMap {
            admin_class: "A".into(),
            country_codes: ["PCLI", "PCLD", "PCLF", "PCLS", "PCL", "TERR"]
                .map(String::from)
                .to_vec(),
            admin1_codes: vec!["ADM1".into()],
            city_classes: vec!["P".into()],
        }
    }
}

impl FeatureCodeMap {
    pub fn classify(&self, feature_class: &str, feature_code: &str) -> Option<Granularity> {
        if feature_class == self.admin_class {
            if self.country_codes.iter().any(|c| c == feature_code) {
                return Some(Granularity::Country);
            }
            if self.admin1_codes.iter().any(|c| c == feature_code) {
                return Some(Granularity::Admin1);
            }
        }
        if self.city_classes.iter().any(|c| c == feature_class) {
            return Some(Granularity::City);
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GazetteerConfig {
    pub min_population: u64,
    pub feature_codes: FeatureCodeMap,
}

impl Default for GazetteerConfig {
    fn default() -> Self {
        GazetteerConfig {
            min_population: 15_000,
            feature_codes: FeatureCodeMap::default(),
        }
    }
}

/// Auxiliary code → name tables.
#[derive(Debug, Clone, Default)]
pub struct CodeTables {
    /// ISO code → country name.
    pub countries: HashMap<String, String>,
    /// `CC.A1` → admin1 name.
    pub admin1: HashMap<String, String>,
    /// `CC.A1.A2` → admin2 name.
    pub admin2: HashMap<String, String>,
}

impl CodeTables {
    pub fn parse<R1: BufRead, R2: BufRead, R3: BufRead>(
        country_info: R1,
        admin1: R2,
        admin2: Option<R3>,
    ) -> Result<Self> {
        let mut tables = CodeTables::default();
        for (n, line) in country_info.lines().enumerate() {
            let line = line?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 5 {
                return Err(Error::format("country info", n + 1, "expected ≥ 5 columns"));
            }
            tables
                .countries
                .insert(fields[0].to_string(), fields[4].to_string());
        }
        tables.admin1 = parse_code_table(admin1, "admin1 codes")?;
        if let Some(admin2) = admin2 {
            tables.admin2 = parse_code_table(admin2, "admin2 codes")?;
        }
        Ok(tables)
    }
}

fn parse_code_table<R: BufRead>(reader: R, what: &'static str) -> Result<HashMap<String, String>> {
    let mut table = HashMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next()) {
            (Some(code), Some(name)) => {
                table.insert(code.to_string(), name.to_string());
            }
            _ => return Err(Error::format(what, n + 1, "expected code<TAB>name")),
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseStats {
    pub lines: usize,
    pub malformed: usize,
    pub unclassified: usize,
    pub unresolved_admin1: usize,
    pub unresolved_country: usize,
}

#[derive(Debug, Clone)]
pub struct ParsedGazetteer {
    pub entities: Vec<LocationEntity>,
    pub stats: ParseStats,
}

const DUMP_FIELDS: usize = 15;

/// Parse a GeoNames main dump. Malformed lines are skipped and counted; only a
/// failing stream is fatal.
pub fn parse_gazetteer<R: BufRead>(
    dump: R,
    tables: &CodeTables,
    config: &GazetteerConfig,
) -> Result<ParsedGazetteer> {
    let mut stats = ParseStats::default();
    let mut entities = Vec::new();
    for line in dump.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;
        let fields: Vec<&str> = line.split('\t').collect();
        let Some(raw) = RawRow::from_fields(&fields) else {
            stats.malformed += 1;
            continue;
        };
        let Some(granularity) = config
            .feature_codes
            .classify(raw.feature_class, raw.feature_code)
        else {
            stats.unclassified += 1;
            continue;
        };
        let country_name = match tables.countries.get(raw.country_code) {
            Some(name) => name.clone(),
            None if granularity == Granularity::Country => raw.name.to_string(),
            None => {
                stats.unresolved_country += 1;
                raw.country_code.to_string()
            }
        };
        let (admin1_name, admin2_name) = match granularity {
            Granularity::Country => (String::new(), String::new()),
            _ => {
                // GeoNames uses "00" for "no admin1 assigned".
                let a1 = if raw.admin1.is_empty() {
                    "00"
                } else {
                    raw.admin1
                };
                let key = format!("{}.{}", raw.country_code, a1);
                let admin1_name = match tables.admin1.get(&key) {
                    Some(name) => name.clone(),
                    None => {
                        stats.unresolved_admin1 += 1;
                        if granularity == Granularity::Admin1 {
                            raw.name.to_string()
                        } else {
                            a1.to_string()
                        }
                    }
                };
                let admin2_name = if granularity == Granularity::City && !raw.admin2.is_empty() {
                    tables
                        .admin2
                        .get(&format!("{key}.{}", raw.admin2))
                        .cloned()
                        .unwrap_or_default()
                } else {
                    String::new()
                };
                (admin1_name, admin2_name)
            }
        };
        entities.push(LocationEntity {
            entity_id: raw.id,
            name: raw.name.to_string(),
            ascii_name: raw.ascii_name.to_string(),
            latitude: raw.latitude,
            longitude: raw.longitude,
            granularity,
            country_code: raw.country_code.to_string(),
            country_name,
            admin1_code: raw.admin1.to_string(),
            admin1_name,
            admin2_name,
            population: raw.population,
        });
    }
    Ok(ParsedGazetteer { entities, stats })
}

struct RawRow<'a> {
    id: u64,
    name: &'a str,
    ascii_name: &'a str,
    latitude: f64,
    longitude: f64,
    feature_class: &'a str,
    feature_code: &'a str,
    country_code: &'a str,
    admin1: &'a str,
    admin2: &'a str,
    population: u64,
}

impl<'a> RawRow<'a> {
    fn from_fields(f: &[&'a str]) -> Option<Self> {
        if f.len() < DUMP_FIELDS {
            return None;
        }
        let latitude: f64 = f[4].trim().parse().ok()?;
        let longitude: f64 = f[5].trim().parse().ok()?;
        if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
            return None;
        }
        let country_code = f[8];
        if !is_country_code(country_code) || f[1].trim().is_empty() {
            return None;
        }
        let population = match f[14].trim() {
            "" => 0,
            p => p.parse().ok()?,
        };
        Some(RawRow {
            id: f[0].trim().parse().ok()?,
            name: f[1],
            ascii_name: f[2],
            latitude,
            longitude,
            feature_class: f[6],
            feature_code: f[7],
            country_code,
            admin1: f[10],
            admin2: f[11],
            population,
        })
    }
}

fn is_country_code(s: &str) -> bool {
    s.len() == 2 && s.bytes().all(|b| b.is_ascii_uppercase())
}

/// Drop cities under `min_population` and deduplicate by triple, keeping the
/// more populous entity (lower id on a tie). Survivors keep input order.
pub fn filter_entities(
    entities: &[LocationEntity],
    config: &GazetteerConfig,
) -> Vec<LocationEntity> {
    let mut best: HashMap<LocationTriple, usize> = HashMap::new();
    for (i, e) in entities.iter().enumerate() {
        if e.granularity == Granularity::City && e.population < config.min_population {
            continue;
        }
        match best.entry(e.triple()) {
            Entry::Vacant(v) => {
                v.insert(i);
            }
            Entry::Occupied(mut o) => {
                let cur = &entities[*o.get()];
                if (e.population, std::cmp::Reverse(e.entity_id))
                    > (cur.population, std::cmp::Reverse(cur.entity_id))
                {
                    o.insert(i);
                }
            }
        }
    }
    let mut keep: Vec<usize> = best.into_values().collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| entities[i].clone()).collect()
}

/// `city, admin2, admin1, country, CC` with empty components skipped.
pub fn canonical_string(entity: &LocationEntity) -> String {
    join_nonempty(
        &[
            entity.city_name(),
            entity.admin2_display(),
            entity.admin1_display(),
            &entity.country_name,
            &entity.country_code,
        ],
        ", ",
    )
}

/// Canonical string plus the granularity-specific name templates, deduplicated
/// and free of empty strings.
pub fn name_variants(entity: &LocationEntity) -> Vec<String> {
    let city = entity.city_name();
    let admin2 = entity.admin2_display();
    let admin1 = entity.admin1_display();
    let country = entity.country_name.as_str();
    let mut out = vec![canonical_string(entity)];
    let templated = match entity.granularity {
        Granularity::Country => vec![country.to_string()],
        Granularity::Admin1 => vec![
            admin1.to_string(),
            join_nonempty(&[admin1, country], " in "),
            join_nonempty(&[country, admin1], " / "),
        ],
        Granularity::City => vec![
            city.to_string(),
            join_nonempty(&[city, admin2, admin1, country], " in "),
            join_nonempty(&[admin1, city], " / "),
            join_nonempty(&[country, city], " / "),
        ],
    };
    for v in templated {
        if !v.trim().is_empty() && !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

fn join_nonempty(parts: &[&str], sep: &str) -> String {
    parts
        .iter()
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(sep)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GranularityCounts {
    pub countries: usize,
    pub admin1: usize,
    pub cities: usize,
}

impl GranularityCounts {
    pub fn of(entities: &[LocationEntity]) -> Self {
        let mut c = GranularityCounts::default();
        for e in entities {
            match e.granularity {
                Granularity::Country => c.countries += 1,
                Granularity::Admin1 => c.admin1 += 1,
                Granularity::City => c.cities += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.countries + self.admin1 + self.cities
    }
}

pub const DATABASE_HEADER: &str =
    "city\tadmin1\tcountry\tcountry_code\tlat\tlon\tpopulation\tgranularity\tadmin2\tentity_id";

/// Write the filtered database as TSV. The two trailing columns carry what is
/// needed to rebuild canonical strings.
pub fn write_database<W: Write>(mut out: W, entities: &[LocationEntity]) -> Result<()> {
    use crate::text::escape;
    writeln!(out, "{DATABASE_HEADER}")?;
    for e in entities {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            escape(e.city_name()),
            escape(e.admin1_display()),
            escape(&e.country_name),
            e.country_code,
            e.latitude,
            e.longitude,
            e.population,
            e.granularity.as_str(),
            escape(e.admin2_display()),
            e.entity_id
        )?;
    }
    Ok(())
}

pub fn read_database<R: BufRead>(reader: R) -> Result<Vec<LocationEntity>> {
    use crate::text::unescape;
    const WHAT: &str = "database";
    let mut lines = reader.lines();
    match lines.next() {
        Some(header) => {
            let header = header?;
            if !header.starts_with("city\tadmin1\tcountry\tcountry_code") {
                return Err(Error::format(WHAT, 1, "missing header"));
            }
        }
        None => return Err(Error::format(WHAT, 1, "empty file")),
    }
    let mut entities = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let lineno = n + 2;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 8 {
            return Err(Error::format(WHAT, lineno, "expected ≥ 8 columns"));
        }
        let bad = |col: &str| Error::format(WHAT, lineno, format!("bad {col}"));
        let granularity: Granularity = f[7].parse()?;
        let (city, admin1, country) = (unescape(f[0]), unescape(f[1]), unescape(f[2]));
        let name = match granularity {
            Granularity::City => city,
            Granularity::Admin1 => admin1.clone(),
            Granularity::Country => country.clone(),
        };
        entities.push(LocationEntity {
            entity_id: match f.get(9) {
                Some(id) => id.parse().map_err(|_| bad("entity_id"))?,
                None => n as u64,
            },
            ascii_name: name.clone(),
            name,
            latitude: f[4].parse().map_err(|_| bad("lat"))?,
            longitude: f[5].parse().map_err(|_| bad("lon"))?,
            granularity,
            country_code: f[3].to_string(),
            country_name: country,
            admin1_code: String::new(),
            admin1_name: admin1,
            admin2_name: f.get(8).map(|s| unescape(s)).unwrap_or_default(),
            population: f[6].parse().map_err(|_| bad("population"))?,
        });
    }
    Ok(entities)
}
