"""Performance bounds and a reference estimator for multi-image translation alignment."""

__version__ = "0.1.0"

from .bounds_det import (  # noqa: E402
    DetBoundInput,
    GradientEnergy,
    ShiftPriorGG,
    bcrb,
    crbd,
    crbd_known,
    gg_lambda2,
    gradient_energy,
)
from .bounds_stoch import (  # noqa: E402
    StochBoundInput,
    crbs,
    crbs_flat_closed,
    crbs_hsnr,
    crbs_natural_closed,
    snr1_flat,
    snr1_natural,
)
from .errors import *  # noqa: E402,F401,F403
from .ezzb import EzzbFlatInput, ezzb_flat, ezzb_terms, overlap_factor, pmin, snr2, snr3  # noqa: E402
from .mle import MleResult, RegistrationConfig, mle_avg, register_pair, shifted_average  # noqa: E402
from .spectral import (  # noqa: E402
    Empirical,
    Flat,
    FrequencyGrid,
    ImageGeometry,
    InverseSquare,
    NoiseSpectrum,
    build_frequency_grid,
    empirical_snr,
    sigma2_for_snr,
)
from .synth import (  # noqa: E402
    ObservationSet,
    TrialSeed,
    UniformBox,
    UniformPositive,
    fourier_shift,
    gen_flat_image,
    gen_natural_image,
    make_observations,
)
