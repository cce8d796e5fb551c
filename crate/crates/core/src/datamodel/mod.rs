//! Domain records, the feature schema, example encoding and JSONL IO.

mod embedding;
mod encode;
pub mod io;
mod records;
mod schema;

pub use embedding::{embed_categorical, embed_column, EmbeddingTables};
pub use encode::{
    build_interaction_features, title_overlap, CtrLookup, CtrTable, EncodedExample, Encoder, Labels, NoCtr,
};
pub use io::{load_jsonl, save_jsonl};
pub use records::{CustomerRecord, Dataset, ImpressionRecord, ProductRecord, QueryRecord};
pub use schema::{
    CategoricalFeature, CategoricalSource, ContinuousFeature, FeatureSchema, InteractionKind, InteractionSlot,
    NumericSource, SchemaOptions, UNKNOWN_INDEX,
};
