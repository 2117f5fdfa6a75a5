"""Python bindings for the topotag C++ core."""

from ._core import (
    CacheDepthError,
    ConfigError,
    Datastore,
    DegenerateInputError,
    FormatError,
    IoError,
    NormalizationError,
    NumericsError,
    ParameterError,
    SchemaError,
    TopoError,
    build_datastore,
    cosine_distance_matrix,
    decode_bio,
    exact_knn,
    kendall_tau_b,
    load_datastore,
    normalize_dedup,
    normalize_l2,
    persistence_image,
    phrasal_prf,
    run_pipeline,
    save_datastore,
    synth,
    vr_persistence_h0,
    vr_persistence_h1,
    wasserstein_norm,
)

__version__ = "0.1.0"
__all__ = [name for name in dir() if not name.startswith("_")]
