"""kacsim: event-driven Kac-process collision simulator with an exact-W1
verification harness.

Subpackages
-----------
geometry   exact post-collisional kinematics and the coupling map xi_zero
kernel     collision kernels: velocity part, singular angular measure, sampling
ensemble   N-particle jump-process simulation (exact thinning)
coupling   joint two-ensemble evolution with common collision noise
transport  exact Kantorovich-Rubinstein (W1) distance with dual certificates
bounds     theoretical envelopes (log-Gronwall, exponential, moments)
harness    config parsing, experiment orchestration, deterministic emission
service    FastAPI application wrapping the harness
cli        thin command-line client for the service
"""

__version__ = "0.1.0"
