"""Heralded non-classical states of spin or motion from shaped photon drives."""

__version__ = "0.1.0"

from .exceptions import (ConfigError, CutoffError, PhotonPaintError,
                         PhysicsValidityError, QuadratureError,
                         UnreachableTargetError)
from .herald import (CooperativityInput, CooperativityLimits, DetectorModel,
                     cooperativity_limits, fidelity_eps, fidelity_min,
                     target_cat, target_from_coeffs, target_from_weight)
from .pulses import (DeltaAtom, DriveWaveform, TargetSpec, cat_pulse,
                     fourier_weights, mech_qubit_pulse, synthesize_from_coeffs,
                     synthesize_from_weight)
from .statespace import (CavityModel, JointState, MechModel, SpinModel,
                         build_h_eff, coherent_spin_state,
                         displaced_fock_state, mech_ground_state, rotate_spin,
                         spin_x_state, u1_propagator)
from .evolve import (ClickRecord, HeraldedResult, apply_delta_kick,
                     heralded_state, heralded_state_spin_exact,
                     propagate_nojump, record_completeness, success_ratio,
                     transmission_rate, weak_drive_heralded_state)
