"""MRF-MRF alignment, homology search statistics, and joint contact prediction."""

from ._core import (
    ArgumentError,
    Error,
    FormatError,
    Msa,
    NumericalError,
    __version__,
    admm_align,
    alignment_accuracy,
    apc,
    brute_force_align,
    dp_align,
    fit_evd,
    glasso_contacts,
    make_msa,
    meff,
    mrf_summary,
    parse_msa,
    pvalue,
    read_msa_file,
    sequence_weights,
    soft_threshold,
    sp1_eigenvalue,
    summarize,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
