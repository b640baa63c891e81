"""Detection and temporal estimation of pulsed interference on 802.11-style links."""

from pulsedint.interference import (
    InterferenceModel,
    PulseTrain,
    TheoreticalCurve,
    generate_pulse_train,
    overlap_indicator,
    occupancy_fraction,
    theoretical_loss_curve,
)
from pulsedint.linksim import SimConfig, TransmissionRecord, run_link_sim
from pulsedint.nonparam import (
    BasisSpec,
    CcdfEstimate,
    LossCurve,
    clopper_pearson,
    combine_pair_losses,
    estimate_loss_curve,
    recover_ccdf_bias_corrected,
    recover_ccdf_direct,
)
from pulsedint.param import GEParams, ParamFitResult, fit_ml

__version__ = "0.1.0"
