//! Network-quality evaluation: node2vec embeddings, a cross-validated linear
//! classifier, the data-efficiency sweep and the engagement benchmark export.

mod classify;
mod engagement;
mod node2vec;
mod rewire;
mod sweep;

pub use classify::{
    auc, evaluate_classification, evaluate_with, macro_auc, macro_f1, stratified_folds, EvalReport, LogisticModel,
    LogisticParams,
};
pub use engagement::{engagement_matrices, export_engagement_benchmark, EngagementBenchmark};
pub use node2vec::{
    embed_graph, generate_walks, train_node_embeddings, write_node_embeddings, write_walks, NodeEmbeddings,
    Node2VecParams,
};
pub use rewire::rewire_degree_preserving;
pub use sweep::{
    build_network, data_efficiency_sweep, efficiency_point, evaluate_graph, nested_subsets, NetworkEvalConfig,
    SweepLevel, SweepReport,
};
