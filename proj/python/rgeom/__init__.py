"""Geometry of reasoning trajectories.

Thin Python layer over the C++ library: geometry metrics on NumPy arrays,
synthetic trajectory sets, per-condition analysis and comparisons, endpoint
operators and answer-token probes. Reports come back as plain dicts with the
same layout as the CLI's JSON files.
"""

from ._rgeom import (
    DataQualityError,
    Error,
    FormatError,
    NumericalError,
    Operator,
    TrajectorySet,
    UsageError,
    alignment,
    analyze,
    answer_targets,
    best_silhouette,
    bootstrap_mean_delta,
    classify_phase,
    coherence,
    compactness,
    compare,
    d95,
    default_synth_spec,
    endpoint_arrays,
    evaluate_operator,
    gl_ratio,
    grad_check,
    mle_dimension,
    pca_spectrum,
    read_unembedding,
    render_report,
    synthesize,
    train_operator,
    train_probe,
    unembed_decode,
    write_set,
    write_unembedding,
)

__all__ = [name for name in dir() if not name.startswith("_")]
