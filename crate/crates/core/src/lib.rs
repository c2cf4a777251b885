//! Geo-entity linking over location embeddings.
//!
//! Free-text location strings are mapped to `(city, admin1, country)` triples by
//! nearest-centroid search. Each location in a gazetteer-derived target database
//! is represented by a unit-normalized centroid built either from its name
//! strings alone ([`index::IndexKind::NameGeo`]) or from labeled user mentions
//! plus its name strings ([`index::IndexKind::UserGeo`]). A cosine-similarity
//! threshold turns the linker into a selective predictor.

pub mod embedding;
pub mod error;
pub mod eval;
pub mod gazetteer;
pub mod index;
pub mod linker;
pub mod mentions;
pub mod reverse_geocode;
pub mod synthetic;
pub mod text;

pub use embedding::{EmbeddingProvider, EmbeddingVector};
pub use error::{Error, Result};
pub use gazetteer::{Granularity, LocationEntity, LocationTriple};
pub use index::LocationIndex;
pub use linker::Prediction;
