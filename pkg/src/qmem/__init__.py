"""Memory-aware Q-profile regression with Modern Hopfield association.

A small numpy autodiff core (:mod:`qmem.autodiff`) backs the shared MLP
encoder, sinusoidal positional table, two-branch Hopfield model and SGD
trainer. :mod:`qmem.data` provides shot-structured corpora, including a
synthetic AR(1) latent-state generator.
"""

from .autodiff import ParamStore, Tensor, backward, gradcheck, no_grad
from .data import ShotSeries, SampleWindow, Standardizer, SynthSpec, WindowBatch, build_windows, \
    resolve_window, split_contiguous, synth_generate
from .hopfield import HopfieldSpec, hopfield_assoc, hopfield_stack, take_last
from .layers import MlpSpec, PosEncTable, head_forward, mlp_forward, posenc_add, posenc_build
from .model import ABLATION_ROWS, Ablation, ModelConfig, QDistModel, count_params, forward, init_params, \
    full_scale_config
from .training import TrainConfig, TrainReport, evaluate, load_checkpoint, mse_loss, save_checkpoint, \
    sgd_step, train

__version__ = "0.1.0"
