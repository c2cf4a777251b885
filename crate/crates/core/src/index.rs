//! Location indexes: one unit-normalized centroid per target location.
//!
//! NameGeo centroids come from name strings only; UserGeo centroids average
//! labeled user mentions together with the location's name strings. Member
//! embeddings are unit vectors and the mean is re-normalized, so a location
//! without mentions gets exactly its NameGeo centroid.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingProvider, EmbeddingVector, format_floats, parse_floats};
use crate::error::{Error, Result};
use crate::gazetteer::{LocationEntity, LocationTriple, canonical_string, name_variants};
use crate::mentions::LabeledMention;
use crate::text::{escape, unescape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    NameGeo,
    UserGeo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    pub enabled: bool,
    /// Members farther than `multiplier` × the mean squared distance are
    /// dropped.
    pub multiplier: f64,
    pub exempt_supplemental: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            enabled: false,
            multiplier: 1.0,
            exempt_supplemental: true,
        }
    }
}

impl PruneConfig {
    pub fn enabled(multiplier: f64) -> Self {
        PruneConfig {
            enabled: true,
            multiplier,
            exempt_supplemental: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.multiplier > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "prune multiplier must be > 0, got {}",
                self.multiplier
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildMode {
    pub kind: IndexKind,
    pub variants: bool,
    pub prune: PruneConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub triple: LocationTriple,
    pub centroid: EmbeddingVector,
    pub mention_count: usize,
    pub supplemental_count: usize,
}

/// Immutable triple → centroid map, kept sorted by triple so a linear scan
/// visits locations in tie-break order.
#[derive(Debug, Clone)]
pub struct LocationIndex {
    provider: String,
    dimension: usize,
    mode: BuildMode,
    entries: Vec<IndexEntry>,
    lookup: HashMap<LocationTriple, usize>,
    // Row-major copy of the centroids for the scan.
    matrix: Vec<f64>,
}

impl LocationIndex {
    pub fn from_entries(
        provider: impl Into<String>,
        mode: BuildMode,
        mut entries: Vec<IndexEntry>,
    ) -> Result<Self> {
        let dimension = entries
            .first()
            .map(|e| e.centroid.dimension())
            .ok_or_else(|| Error::InvalidArgument("index has no entries".into()))?;
        entries.sort_by(|a, b| a.triple.cmp(&b.triple));
        let mut lookup = HashMap::with_capacity(entries.len());
        let mut matrix = Vec::with_capacity(entries.len() * dimension);
        for (i, e) in entries.iter().enumerate() {
            if e.centroid.dimension() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    actual: e.centroid.dimension(),
                });
            }
            if e.triple.is_null() {
                return Err(Error::InvalidArgument(
                    "index entry with null triple".into(),
                ));
            }
            if lookup.insert(e.triple.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate triple {}",
                    e.triple
                )));
            }
            matrix.extend_from_slice(e.centroid.values());
        }
        Ok(LocationIndex {
            provider: provider.into(),
            dimension,
            mode,
            entries,
            lookup,
            matrix,
        })
    }

    pub fn provider(&self) -> &str {
        &self.provider
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn mode(&self) -> &BuildMode {
        &self.mode
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, triple: &LocationTriple) -> Option<&IndexEntry> {
        self.lookup.get(triple).map(|&i| &self.entries[i])
    }

    /// Centroid row `i` in scan order.
    pub(crate) fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dimension..(i + 1) * self.dimension]
    }

    // -- file format ---------------------------------------------------------

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let header = IndexHeader {
            dim: self.dimension,
            provider: self.provider.clone(),
            mode: self.mode,
            entry_count: self.entries.len(),
        };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for e in &self.entries {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                escape(e.triple.city()),
                escape(e.triple.admin1()),
                escape(e.triple.country()),
                e.mention_count,
                e.supplemental_count,
                format_floats(e.centroid.values())
            )?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        const WHAT: &str = "index";
        let mut lines = reader.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::format(WHAT, 1, "empty file"))?;
        let header: IndexHeader =
            serde_json::from_str(&header).map_err(|e| Error::format(WHAT, 1, e.to_string()))?;
        let mut entries = Vec::with_capacity(header.entry_count);
        for (n, line) in lines.enumerate() {
            let line = line?;
            let lineno = n + 2;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(Error::format(WHAT, lineno, "expected 6 columns"));
            }
            let triple = LocationTriple::new(&unescape(f[0]), &unescape(f[1]), &unescape(f[2]))
                .map_err(|e| Error::format(WHAT, lineno, e.to_string()))?;
            let count = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::format(WHAT, lineno, format!("bad count {s:?}")))
            };
            let values = parse_floats(f[5]).map_err(|m| Error::format(WHAT, lineno, m))?;
            if values.len() != header.dim {
                return Err(Error::format(
                    WHAT,
                    lineno,
                    "centroid dimension differs from header",
                ));
            }
            entries.push(IndexEntry {
                triple,
                centroid: EmbeddingVector::from_unit(values)
                    .map_err(|e| Error::format(WHAT, lineno, e.to_string()))?,
                mention_count: count(f[3])?,
                supplemental_count: count(f[4])?,
            });
        }
        if entries.len() != header.entry_count {
            return Err(Error::format(
                WHAT,
                1,
                format!(
                    "header promises {} entries, found {}",
                    header.entry_count,
                    entries.len()
                ),
            ));
        }
        Self::from_entries(header.provider, header.mode, entries)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    dim: usize,
    provider: String,
    mode: BuildMode,
    entry_count: usize,
}

/// Counters reported by an index build.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BuildStats {
    pub entries: usize,
    pub mentions_used: usize,
    /// Mentions whose truth triple is not in the target database.
    pub mentions_dropped: usize,
    /// Members eligible for pruning (non-exempt), summed over locations.
    pub prunable: usize,
    pub pruned: usize,
    /// Mean over locations with prunable members of the per-location pruned
    /// fraction.
    pub mean_cluster_pruned_fraction: f64,
}

impl BuildStats {
    pub fn pruned_fraction(&self) -> f64 {
        if self.prunable == 0 {
            0.0
        } else {
            self.pruned as f64 / self.prunable as f64
        }
    }
}

/// One-shot outlier pruning. Returns the indices of kept vectors in input
/// order.
///
/// The centroid is the plain mean of all vectors; a non-exempt vector is
/// dropped when its squared distance to the centroid exceeds `multiplier`
/// times the mean squared distance. If that would leave nothing, the vector
/// closest to the centroid is kept.
pub fn prune_outliers(vectors: &[&[f64]], exempt: &HashSet<usize>, multiplier: f64) -> Vec<usize> {
    if vectors.is_empty() {
        return Vec::new();
    }
    let dim = vectors[0].len();
    let n = vectors.len() as f64;
    let mut center = vec![0.0; dim];
    for v in vectors {
        for (c, x) in center.iter_mut().zip(v.iter()) {
            *c += x;
        }
    }
    center.iter_mut().for_each(|c| *c /= n);
    let dist: Vec<f64> = vectors
        .iter()
        .map(|v| v.iter().zip(&center).map(|(x, c)| (x - c) * (x - c)).sum())
        .collect();
    let mean = dist.iter().sum::<f64>() / n;
    let threshold = multiplier * mean;
    let kept: Vec<usize> = (0..vectors.len())
        .filter(|i| exempt.contains(i) || dist[*i] <= threshold)
        .collect();
    if kept.is_empty() {
        let closest = (0..vectors.len())
            .min_by(|a, b| dist[*a].total_cmp(&dist[*b]))
            .expect("non-empty");
        return vec![closest];
    }
    kept
}

fn supplemental_strings(entity: &LocationEntity, use_variants: bool) -> Vec<String> {
    if use_variants {
        name_variants(entity)
    } else {
        vec![canonical_string(entity)]
    }
}

/// Sum of members divided by `denominator`, then normalized.
fn mean_direction(members: &[&[f64]], dim: usize, denominator: usize) -> Result<EmbeddingVector> {
    let mut sum = vec![0.0; dim];
    for m in members {
        for (s, x) in sum.iter_mut().zip(m.iter()) {
            *s += x;
        }
    }
    let d = denominator as f64;
    EmbeddingVector::normalized(sum.into_iter().map(|s| s / d).collect())
}

const EMBED_CHUNK: usize = 256;

/// Embed every distinct text once, in parallel chunks.
fn embed_unique<'a>(
    provider: &dyn EmbeddingProvider,
    texts: impl IntoIterator<Item = &'a str>,
) -> Result<HashMap<&'a str, EmbeddingVector>> {
    let mut seen = HashSet::new();
    let unique: Vec<&str> = texts.into_iter().filter(|t| seen.insert(*t)).collect();
    let vectors: Vec<Vec<EmbeddingVector>> = unique
        .par_chunks(EMBED_CHUNK)
        .map(|chunk| provider.embed_batch(chunk))
        .collect::<Result<_>>()?;
    Ok(unique
        .into_iter()
        .zip(vectors.into_iter().flatten())
        .collect())
}

/// NameGeo: each location represented only by its name string(s).
pub fn build_name_index(
    entities: &[LocationEntity],
    provider: &dyn EmbeddingProvider,
    use_variants: bool,
) -> Result<LocationIndex> {
    let mode = BuildMode {
        kind: IndexKind::NameGeo,
        variants: use_variants,
        prune: PruneConfig::default(),
    };
    let (index, _) = build(entities, &[], provider, mode)?;
    Ok(index)
}

/// UserGeo: each location represented by its labeled mentions plus its name
/// string(s).
pub fn build_user_index(
    entities: &[LocationEntity],
    mentions: &[LabeledMention],
    provider: &dyn EmbeddingProvider,
    use_variants: bool,
    prune: PruneConfig,
) -> Result<(LocationIndex, BuildStats)> {
    prune.validate()?;
    let mode = BuildMode {
        kind: IndexKind::UserGeo,
        variants: use_variants,
        prune,
    };
    build(entities, mentions, provider, mode)
}

fn build(
    entities: &[LocationEntity],
    mentions: &[LabeledMention],
    provider: &dyn EmbeddingProvider,
    mode: BuildMode,
) -> Result<(LocationIndex, BuildStats)> {
    if entities.is_empty() {
        return Err(Error::InvalidArgument("no entities to index".into()));
    }
    let dim = provider.dimension();
    let triples: Vec<LocationTriple> = entities.iter().map(LocationEntity::triple).collect();
    let position: HashMap<&LocationTriple, usize> =
        triples.iter().enumerate().map(|(i, t)| (t, i)).collect();
    if position.len() != triples.len() {
        return Err(Error::InvalidArgument(
            "entities must be deduplicated by triple before indexing".into(),
        ));
    }

    let mut stats = BuildStats::default();
    let mut by_location: Vec<Vec<&str>> = vec![Vec::new(); entities.len()];
    for m in mentions {
        match position.get(&m.truth) {
            Some(&i) => {
                by_location[i].push(m.user_input.as_str());
                stats.mentions_used += 1;
            }
            None => stats.mentions_dropped += 1,
        }
    }
    // Sorted member order makes centroids independent of mention order.
    by_location.par_iter_mut().for_each(|v| v.sort_unstable());

    let supplemental: Vec<Vec<String>> = entities
        .par_iter()
        .map(|e| supplemental_strings(e, mode.variants))
        .collect();
    let vectors = embed_unique(
        provider,
        supplemental
            .iter()
            .flatten()
            .map(String::as_str)
            .chain(by_location.iter().flatten().copied()),
    )?;

    let prune = mode.prune;
    let built: Vec<(IndexEntry, usize, usize)> = (0..entities.len())
        .into_par_iter()
        .map(|i| {
            let supp = &supplemental[i];
            let members: Vec<&[f64]> = supp
                .iter()
                .map(String::as_str)
                .chain(by_location[i].iter().copied())
                .map(|t| vectors[t].values())
                .collect();
            let total = members.len();
            let (kept, prunable, pruned) = if prune.enabled && by_location[i].len() + supp.len() > 1
            {
                let exempt: HashSet<usize> = if prune.exempt_supplemental {
                    (0..supp.len()).collect()
                } else {
                    HashSet::new()
                };
                let keep = prune_outliers(&members, &exempt, prune.multiplier);
                let kept: Vec<&[f64]> = keep.iter().map(|&k| members[k]).collect();
                let prunable = total - exempt.len();
                (kept, prunable, total - keep.len())
            } else {
                (members, 0, 0)
            };
            let centroid = mean_direction(&kept, dim, total).map_err(|e| Error::Provider {
                provider: provider.tag().to_string(),
                text: supp[0].clone(),
                msg: format!("degenerate centroid: {e}"),
            })?;
            Ok((
                IndexEntry {
                    triple: triples[i].clone(),
                    centroid,
                    mention_count: by_location[i].len(),
                    supplemental_count: supp.len(),
                },
                prunable,
                pruned,
            ))
        })
        .collect::<Result<_>>()?;

    let mut entries = Vec::with_capacity(built.len());
    let (mut fraction_sum, mut clusters) = (0.0, 0usize);
    for (entry, prunable, pruned) in built {
        stats.prunable += prunable;
        stats.pruned += pruned;
        if prunable > 0 {
            fraction_sum += pruned as f64 / prunable as f64;
            clusters += 1;
        }
        entries.push(entry);
    }
    stats.entries = entries.len();
    stats.mean_cluster_pruned_fraction = if clusters == 0 {
        0.0
    } else {
        fraction_sum / clusters as f64
    };
    let index = LocationIndex::from_entries(provider.tag(), mode, entries)?;
    Ok((index, stats))
}
