//! Query bootstrap, inter-rater agreement and stratified sampling.

mod agreement;
mod bootstrap;
mod sampling;
mod uncertainty;

pub use agreement::{
    agreement_report, cohen_kappa, fleiss_kappa, krippendorff_alpha_nominal, pairwise_agreement, AgreementReport,
    LabelMatrix, PairwiseAgreement,
};
pub use bootstrap::{
    between_split_delta_ci, bootstrap_mean_ci, nearest_rank, paired_delta_ci, BootstrapConfig, IntervalEstimate,
};
pub use sampling::{stratified_sample, StratifiedSample};
pub use uncertainty::{uncertainty_report, UncertaintyRow};
