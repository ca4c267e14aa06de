//! Patients, visits and codes; the bundle file format; synthetic cohorts;
//! stratified cross-validation splits.

mod bundle;
mod record;
mod split;
mod synthetic;
mod vocab;

pub use bundle::{load_bundle, load_bundle_with_min_visits, save_bundle, task_file_name, META_FILE, UNLABELED_FILE, VOCAB_FILE};
pub use record::{
    build_visit_matrix, cardiac_complications, ComplicationInfo, Demographics, LabeledDataset, PatientRecord,
    TaskBundle, Visit, AGE_GROUPS, DEMO_DIM, REGIONS,
};
pub use split::{kfold_split, FoldSplit};
pub use synthetic::{
    generate_cohort, generate_synthetic_bundle, planted_count, synthetic_vocabulary, LabelRule, SyntheticCohort,
    SyntheticSpec,
};
pub use vocab::{ClinicalCode, CodeCategory, CodeVocabulary};

pub(crate) use record::visit_matrix;
