"""Universal speaker extraction toolkit."""

from ._usev import (  # noqa: F401
    EPSILON,
    Model,
    UsevError,
    energy,
    frame_signal,
    generate_clip,
    gradcheck,
    label_scenarios,
    load_corpus,
    loss_differentiated,
    loss_energy,
    loss_sdr,
    loss_uniform,
    measure_snr_db,
    overlap_add,
    overlap_bucket,
    overlap_ratio,
    power_db_per_s,
    scale_to_snr,
    si_sdr,
    simulate,
)
