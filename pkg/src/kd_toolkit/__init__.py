"""Knowledge distillation with adjusted teacher targets and per-sample temperatures."""
from .adjustment import AdjustmentMode, AdjustmentReport, adjust, adjust_lsr, adjust_ps, find_misjudged
from .analysis import EvalReport, accuracy, evaluate_logits, genetic_errors, top2_gap_curve
from .dynamic_temperature import (DtdConfig, TauVector, normalize_l1, tau_per_sample, weights_cwsm,
                                  weights_flsw)
from .losses import (DistillSpec, LossBreakdown, evaluate, grad_student_logits, loss_dtd, loss_ka, loss_kd,
                     loss_total)
from .soft_targets import cross_entropy, kd_loss, kl_divergence, softmax_tau

__version__ = "0.1.0"
