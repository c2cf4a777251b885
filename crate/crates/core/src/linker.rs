//! Selective nearest-centroid linking.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::embedding::{EmbeddingProvider, EmbeddingVector, dot};
use crate::error::{Error, Result};
use crate::gazetteer::LocationTriple;
use crate::index::LocationIndex;
use crate::text::{escape, unescape};

/// Linking outcome. `score` is the best similarity found, reported even when
/// the prediction is Null.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub triple: LocationTriple,
    pub score: f64,
    pub accepted: bool,
}

impl Prediction {
    pub fn null(score: f64) -> Self {
        Prediction {
            triple: LocationTriple::null(),
            score,
            accepted: false,
        }
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "threshold must lie in [0, 1], got {threshold}"
        )))
    }
}

fn check_compatible(index: &LocationIndex, provider: &dyn EmbeddingProvider) -> Result<()> {
    if index.provider() != provider.tag() {
        return Err(Error::ProviderMismatch {
            index: index.provider().to_string(),
            provider: provider.tag().to_string(),
        });
    }
    if index.dimension() != provider.dimension() {
        return Err(Error::DimensionMismatch {
            expected: index.dimension(),
            actual: provider.dimension(),
        });
    }
    Ok(())
}

/// Exact argmax of the dot product over all centroids. Entries are stored in
/// triple order, so keeping the first maximum breaks ties lexicographically.
pub fn best_match(index: &LocationIndex, query: &EmbeddingVector) -> Result<(usize, f64)> {
    if query.dimension() != index.dimension() {
        return Err(Error::DimensionMismatch {
            expected: index.dimension(),
            actual: query.dimension(),
        });
    }
    let q = query.values();
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..index.len() {
        let s = dot(index.row(i), q);
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best)
}

/// Apply the acceptance rule `score ≥ threshold` to an embedded query.
pub fn decide(
    index: &LocationIndex,
    query: &EmbeddingVector,
    threshold: f64,
) -> Result<Prediction> {
    let (i, score) = best_match(index, query)?;
    Ok(if score >= threshold {
        Prediction {
            triple: index.entries()[i].triple.clone(),
            score,
            accepted: true,
        }
    } else {
        Prediction::null(score)
    })
}

pub fn link(
    index: &LocationIndex,
    provider: &dyn EmbeddingProvider,
    input: &str,
    threshold: f64,
) -> Result<Prediction> {
    check_threshold(threshold)?;
    check_compatible(index, provider)?;
    decide(index, &provider.embed(input)?, threshold)
}

const LINK_CHUNK: usize = 128;

/// Order-preserving parallel [`link`]. Fails on the first provider error,
/// reporting the offending input's offset.
pub fn link_batch<S: AsRef<str> + Sync>(
    index: &LocationIndex,
    provider: &dyn EmbeddingProvider,
    inputs: &[S],
    threshold: f64,
) -> Result<Vec<Prediction>> {
    check_threshold(threshold)?;
    check_compatible(index, provider)?;
    let chunks: Vec<Vec<Prediction>> = inputs
        .par_chunks(LINK_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let texts: Vec<&str> = chunk.iter().map(AsRef::as_ref).collect();
            let vectors = match provider.embed_batch(&texts) {
                Ok(v) => v,
                // Re-embed one at a time to pin down the failing input.
                Err(_) => texts
                    .iter()
                    .enumerate()
                    .map(|(k, t)| {
                        provider.embed(t).map_err(|e| Error::BatchItem {
                            offset: c * LINK_CHUNK + k,
                            source: Box::new(e),
                        })
                    })
                    .collect::<Result<_>>()?,
            };
            vectors
                .iter()
                .map(|v| decide(index, v, threshold))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// `input<TAB>city<TAB>admin1<TAB>country<TAB>score<TAB>accepted`, one row per
/// input, no header.
pub fn write_predictions<W: Write, S: AsRef<str>>(
    mut out: W,
    inputs: &[S],
    predictions: &[Prediction],
) -> Result<()> {
    if inputs.len() != predictions.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            truths: inputs.len(),
        });
    }
    for (input, p) in inputs.iter().zip(predictions) {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            escape(input.as_ref()),
            escape(p.triple.city()),
            escape(p.triple.admin1()),
            escape(p.triple.country()),
            p.score,
            p.accepted
        )?;
    }
    Ok(())
}

/// Inverse of [`write_predictions`]: `(input, prediction)` pairs.
pub fn read_predictions<R: BufRead>(reader: R) -> Result<Vec<(String, Prediction)>> {
    const WHAT: &str = "predictions";
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::format(
                WHAT,
                lineno,
                format!("expected 6 columns, got {}", f.len()),
            ));
        }
        let triple = LocationTriple::new(&unescape(f[1]), &unescape(f[2]), &unescape(f[3]))
            .map_err(|e| Error::format(WHAT, lineno, e.to_string()))?;
        let score: f64 = f[4]
            .parse()
            .map_err(|_| Error::format(WHAT, lineno, format!("bad score {:?}", f[4])))?;
        let accepted: bool = f[5]
            .parse()
            .map_err(|_| Error::format(WHAT, lineno, format!("bad accepted flag {:?}", f[5])))?;
        if accepted == triple.is_null() {
            return Err(Error::format(
                WHAT,
                lineno,
                "accepted flag disagrees with triple",
            ));
        }
        out.push((
            unescape(f[0]),
            Prediction {
                triple,
                score,
                accepted,
            },
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{FileStore, TestEmbedder};
    use crate::gazetteer::tests::entity;
    use crate::gazetteer::{Granularity, LocationEntity, canonical_string};
    use crate::index::{BuildMode, IndexEntry, IndexKind, PruneConfig, build_name_index};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn provider() -> TestEmbedder {
        TestEmbedder::new(48, 3).unwrap()
    }

    fn places() -> Vec<LocationEntity> {
        vec![
            entity(1, Granularity::Country, "Japan", "", "", "Japan", "JP", 0),
            entity(2, Granularity::Country, "Turkey", "", "", "Turkey", "TR", 0),
            entity(3, Granularity::Country, "Peru", "", "", "Peru", "PE", 0),
            entity(
                4,
                Granularity::Admin1,
                "Sinop",
                "",
                "Sinop",
                "Turkey",
                "TR",
                0,
            ),
            entity(
                5,
                Granularity::City,
                "Iwaki",
                "",
                "Fukushima",
                "Japan",
                "JP",
                330_000,
            ),
            entity(
                6,
                Granularity::City,
                "Lima",
                "",
                "Lima",
                "Peru",
                "PE",
                9_000_000,
            ),
            entity(
                7,
                Granularity::City,
                "Istanbul",
                "",
                "Istanbul",
                "Turkey",
                "TR",
                15_000_000,
            ),
        ]
    }

    fn naive(index: &LocationIndex, q: &EmbeddingVector, t: f64) -> Prediction {
        let mut best: Option<(f64, &LocationTriple)> = None;
        for e in index.entries() {
            let s: f64 = e
                .centroid
                .values()
                .iter()
                .zip(q.values())
                .map(|(a, b)| a * b)
                .sum();
            best = match best {
                Some((bs, bt)) if bs > s || (bs == s && bt <= &e.triple) => Some((bs, bt)),
                _ => Some((s, &e.triple)),
            };
        }
        let (s, t3) = best.unwrap();
        if s >= t {
            Prediction {
                triple: t3.clone(),
                score: s,
                accepted: true,
            }
        } else {
            Prediction::null(s)
        }
    }

    #[test]
    fn canonical_input_links_to_itself() {
        let es = places();
        let idx = build_name_index(&es, &provider(), false).unwrap();
        for e in &es {
            let p = link(&idx, &provider(), &canonical_string(e), 0.0).unwrap();
            assert_eq!(p.triple, e.triple());
            assert!((p.score - 1.0).abs() < 1e-6);
            assert!(p.accepted);
        }
    }

    #[test]
    fn threshold_zero_accepts_nonnegative_scores() {
        let idx = build_name_index(&places(), &provider(), true).unwrap();
        for input in ["tokyo", "", "Lima!!", "🇹🇷"] {
            let p = link(&idx, &provider(), input, 0.0).unwrap();
            assert_eq!(p.accepted, p.score >= 0.0);
        }
    }

    #[test]
    fn boundary_is_inclusive() {
        let idx = build_name_index(&places(), &provider(), false).unwrap();
        let p = link(&idx, &provider(), "Lima, PE", 0.0).unwrap();
        let at = link(&idx, &provider(), "Lima, PE", p.score).unwrap();
        assert!(at.accepted);
        assert_eq!(at.triple, p.triple);
        if p.score < 1.0 {
            let above = link(&idx, &provider(), "Lima, PE", (p.score + 1e-12).min(1.0)).unwrap();
            assert!(!above.accepted);
            assert!(above.triple.is_null());
            assert_eq!(above.score, p.score);
        }
    }

    #[test]
    fn ties_go_to_lexicographically_smallest_triple() {
        let v = EmbeddingVector::normalized(vec![1.0; 8]).unwrap();
        let entry = |c: &str, a: &str, k: &str| IndexEntry {
            triple: LocationTriple::new(c, a, k).unwrap(),
            centroid: v.clone(),
            mention_count: 0,
            supplemental_count: 1,
        };
        let mode = BuildMode {
            kind: IndexKind::NameGeo,
            variants: false,
            prune: PruneConfig::default(),
        };
        let idx = LocationIndex::from_entries(
            "fixture",
            mode,
            vec![
                entry("b", "x", "Zed"),
                entry("", "", "Beta"),
                entry("a", "y", "Beta"),
            ],
        )
        .unwrap();
        let (i, _) = best_match(&idx, &v).unwrap();
        assert_eq!(
            idx.entries()[i].triple,
            LocationTriple::new("", "", "Beta").unwrap()
        );
    }

    #[test]
    fn rejects_bad_threshold_and_mismatched_provider() {
        let idx = build_name_index(&places(), &provider(), false).unwrap();
        assert!(link(&idx, &provider(), "x", 1.5).is_err());
        assert!(link(&idx, &provider(), "x", -0.1).is_err());
        let other = TestEmbedder::new(48, 4).unwrap();
        assert!(matches!(
            link(&idx, &other, "x", 0.0),
            Err(Error::ProviderMismatch { .. })
        ));
    }

    #[test]
    fn batch_matches_single_calls_and_brute_force() {
        let es = places();
        let idx = build_name_index(&es, &provider(), true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let words = [
            "lima",
            "PERU",
            "Iwaki",
            "sinop",
            "TR",
            "japan",
            "xyz",
            "istanbul turkey",
            "",
        ];
        let inputs: Vec<String> = (0..1000)
            .map(|_| {
                let a = words[rng.gen_range(0..words.len())];
                let b = words[rng.gen_range(0..words.len())];
                format!("{a} {b}")
            })
            .collect();
        let batch = link_batch(&idx, &provider(), &inputs, 0.5).unwrap();
        assert_eq!(batch.len(), inputs.len());
        for (input, p) in inputs.iter().zip(&batch) {
            assert_eq!(&link(&idx, &provider(), input, 0.5).unwrap(), p);
            assert_eq!(&naive(&idx, &provider().embed(input).unwrap(), 0.5), p);
        }
    }

    #[test]
    fn empty_and_duplicate_batches() {
        let idx = build_name_index(&places(), &provider(), false).unwrap();
        let none: [&str; 0] = [];
        assert!(
            link_batch(&idx, &provider(), &none, 0.3)
                .unwrap()
                .is_empty()
        );
        let two = link_batch(&idx, &provider(), &["Lima", "Lima"], 0.3).unwrap();
        assert_eq!(two[0], two[1]);
    }

    #[test]
    fn batch_reports_failing_offset() {
        let es = places();
        let texts: Vec<String> = es.iter().map(canonical_string).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let store = FileStore::capture(&provider(), &refs).unwrap();
        let idx = build_name_index(&es, &store, false).unwrap();
        let mut inputs: Vec<&str> = refs.iter().cycle().take(300).copied().collect();
        inputs[217] = "not in store";
        match link_batch(&idx, &store, &inputs, 0.0) {
            Err(Error::BatchItem { offset, .. }) => assert_eq!(offset, 217),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn predictions_file_round_trip() {
        let idx = build_name_index(&places(), &provider(), false).unwrap();
        let inputs = ["Lima", "tab\tin input", "福島県いわき市", ""];
        let preds = link_batch(&idx, &provider(), &inputs, 0.4).unwrap();
        assert!(preds.iter().any(|p| !p.accepted));
        let mut buf = Vec::new();
        write_predictions(&mut buf, &inputs, &preds).unwrap();
        let back = read_predictions(buf.as_slice()).unwrap();
        for ((input, p), (orig_in, orig)) in back.iter().zip(inputs.iter().zip(&preds)) {
            assert_eq!(input, orig_in);
            assert_eq!(p, orig);
        }
    }

    #[test]
    fn predictions_file_rejects_inconsistent_rows() {
        assert!(read_predictions("x\t\t\t\t0.5\ttrue\n".as_bytes()).is_err());
        assert!(read_predictions("x\t\t\tperu\t0.5\tmaybe\n".as_bytes()).is_err());
    }

    #[test]
    fn higher_threshold_accepts_subset() {
        let idx = build_name_index(&places(), &provider(), true).unwrap();
        let inputs = [
            "Lima",
            "Peru!!",
            "iwaki city",
            "somewhere",
            "SINOP",
            "Turkey",
        ];
        let lo = link_batch(&idx, &provider(), &inputs, 0.2).unwrap();
        let hi = link_batch(&idx, &provider(), &inputs, 0.6).unwrap();
        for (l, h) in lo.iter().zip(&hi) {
            if h.accepted {
                assert!(l.accepted);
                assert_eq!(l, h);
            }
            assert_eq!(l.score, h.score);
        }
    }
}
