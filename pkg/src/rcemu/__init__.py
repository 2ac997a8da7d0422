"""rcemu: closed-loop synthesis of standard tapped-delay-line channel
models inside a reverberation-chamber-like propagation channel.

The package sounds a simulated chamber with a pulse-shaped PN waveform,
derives a deconvolution equalizer that cancels the chamber's exponential
decay response, cascades it with a fading tapped-delay-line emulator and
verifies the end-to-end power delay profile against the target model.
"""

from .chamber import Cir, RcConfig, rc_ensemble, synthesize_rc_cir
from .dsp import (ComplexSignal, PnSequence, RrcFilter, convolve, fft,
                  generate_pn, ifft, rrc_taps, slide_correlate,
                  upsample_and_shape)
from .emulator import (DopplerConfig, FadingProcess, TapEntry, TapModel,
                       coerce_to_grid, emulate, generate_fading, load_model,
                       model_to_cir, scale_delay_spread)
from .equalizer import EqualizerFilter, cancellation_report, derive_equalizer
from .errors import ConfigError, NumericalError, RcemuError
from .metrics import (PdpEstimate, ResidualMetrics, TapMatchReport,
                      compute_pdp, detect_taps, match_taps, rms_delay_spread)
from .sounder import (SounderConfig, SystemResponse, WindowSpec, apply_window,
                      calibrate, chip_spaced, compensate_system, sound_channel)

__version__ = "0.1.0"
