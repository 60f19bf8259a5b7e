"""
Constants module for ofbmlab.

Names, file formats and grids shared across services and the CLI.
"""

# Functionals with exact coefficient tables shipped in the package
BUILTIN_FUNCTIONALS = frozenset({"identity", "centered_square", "hermite3", "acceptance"})

# Correlation model families understood by the JSON loader
MODEL_FAMILIES = ("ofgn", "white", "table")

# Output bands of the approximating processes
BANDS = ("full", "head_m", "tail_m")

# Binary sequence dump: 8-byte magic, then little-endian u32 N and u32 d
SEQUENCE_MAGIC = b"OFBMSEQ1"
SEQUENCE_HEADER_FORMAT = "<8sII"

# Sample sizes of the convergence sweep and the Condition H check
DEFAULT_N_LIST = (256, 1024, 4096)
DEFAULT_N_GRID = (64, 128, 256, 512, 1024, 2048, 4096)

# (s, t) pairs of the tightness-exponent fit
DEFAULT_TIGHTNESS_PAIRS = ((0.5, 0.5625), (0.5, 0.625), (0.5, 0.75), (0.25, 0.75), (0.0, 1.0))

# Times of the finite-dimensional law comparison
LAW_TIMES = (0.5, 1.0)

# Quadrature defaults of the OFBM covariance integral
QUAD_X_LOW = 1e-6
QUAD_X_HIGH = 2048.0
QUAD_PANEL_WIDTH = 1.0
QUAD_GAUSS_POINTS = 16
QUAD_LOG_PANELS = 64
QUAD_TOLERANCE = 1e-8
QUAD_MAX_REFINEMENTS = 3

# Phase omega x beyond which the oscillating tail of the covariance integral
# is closed by boundary terms; below it the tail is integrated on log panels
QUAD_TAIL_PHASE = 64.0

# Geometric sub-grid floor of the spectral simulator
SIM_X_LOW = 1e-6

# Discretization deficit above which simulation metadata carries a warning
DEFICIT_WARNING = 0.02

# Largest |t| the covariance quadrature resolves with the default panels
COVARIANCE_T_MAX = 4.0

# Share of simulation cells placed on the geometric sub-grid of (0, 1]
SIM_GEOMETRIC_SHARE = 0.25

# Default output grid of experiment ensembles: {k / 16}
DEFAULT_TIME_STEPS = 16

# Verify suite: scalar fBm oracle grid and Hermite orthogonality order
ORACLE_TIMES = (0.25, 0.5, 0.75, 1.0)
ORTHOGONALITY_MAX_ORDER = 10
MEHLER_SAMPLES = 1_000_000
MEHLER_RHO = 0.5
MEHLER_MAX_ORDER = 4
TELESCOPING_N = (10, 100, 1000)
