"""Sampling engine and benchmark harness for deep-learning model diagnosis."""

from .artifacts import (
    ActivationMatrix,
    ArtifactError,
    RunArtifacts,
    load_run,
    make_run,
    write_run,
)
from .latent import (
    GmmConfig,
    GmmModel,
    MarginConfig,
    MarginModel,
    MembershipTable,
    PcaModel,
    RATIO_CAP,
    gmm_fit,
    margin_fit,
    memberships,
    pca_fit,
)
from .queries import (
    AvgVector,
    EvalReport,
    FullResults,
    MaxDist,
    QueryCell,
    TimingRecord,
    TopK,
    cell_items,
    cosine_distance,
    enumerate_cells,
    evaluate,
    js_distance,
    precision_at_k,
    s1_topk,
    s2_avg,
    s3_maxdist,
)
from .samplers import (
    BoundaryTree,
    CLUSTERED_STRATEGIES,
    FRACTION_CONTROLLED,
    STRATEGIES,
    Sample,
    SampleSpec,
    clustered_sample,
    ebtree_sample,
    fit_memberships,
    latent_grid_sample,
    load_sample,
    make_sample,
    save_sample,
    stratified_cm_sample,
    uniform_sample,
    vas_sample,
    weighted_sample,
)
from .synth import SynthSpec, SynthTruth, generate, generate_with_truth

__all__ = [name for name in dir() if not name.startswith("_")]
