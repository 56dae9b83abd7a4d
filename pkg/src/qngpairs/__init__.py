"""qngpairs: pulsed photon-pair simulation and non-Gaussianity certification.

Subpackages by responsibility:

- photon_number: analytic pair-number laws and the exact detection oracle
- criteria: single-photon and pair-coincidence depth / threshold math
- polarization: two-qubit states, CHSH, tomography, Born sampling
- simulate: Monte Carlo time-tag generation for cascade and squeezing sources
- timetags: stream format, pulse folding, correlation histograms
- estimators: click tables and peak areas to physical quantities
- cli: command-line entry points
"""

from .photon_number import (DetectionChainParams, PairClickStats,
                            PhotonPairDistribution, detected_pair_click_probs,
                            multimode_distribution, qd_pair_distribution,
                            tmsv_distribution)
from .criteria import (CriterionNotViolated, PhotonNumberStats, QngPairReport,
                       SpsDepthResult, depth_curve, pair_depth, pair_threshold,
                       pair_threshold_exact, pair_violation, sps_depth)
from .polarization import (ChshResult, DensityMatrix, MeasurementSetting,
                           TomographyCounts, chsh_expectation, chsh_from_counts,
                           fidelity, sample_polarization_pair,
                           tomography_reconstruct)
from .simulate import (ChannelConfig, DetectorParams, QdSourceConfig,
                       SpdcSourceConfig, attenuate_stream,
                       rabi_preparation_probability, simulate_qd, simulate_spdc)
from .timetags import (CorrelationHistogram, PeakAreas, PulseClickTable,
                       Stream, StreamHeader, auto_offsets, correlation_histogram,
                       csv_export, csv_import, fold_pulses, fold_pulses_multi,
                       integrate_peaks, read_all, read_stream, window_sweep,
                       write_stream)
from .estimators import (ClickCounts, G2Result, NoHeraldsError,
                         PrepEfficiencyResult, g2_from_peaks, hbt_counts,
                         pair_click_stats, photon_stats, prep_efficiency)

__version__ = "0.1.0"
