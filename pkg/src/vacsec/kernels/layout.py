"""Column layout of the flat converter/load arrays shared by both backends.

Keep in sync with the ``cdef enum`` blocks in ``_ckernels.pyx``.
"""

# converter float columns
C_G = 0
C_B = 1
C_VREF_D = 2
C_VREF_Q = 3
C_P = 4
C_Q = 5
C_IMAX = 6
C_IDMAX_LIT = 7
C_PMAX = 8
C_VFLOOR = 9
C_KP_DROOP = 10
C_KQ_DROOP = 11
C_DEADBAND = 12
C_DROOP_VNOM = 13
C_DROOP_LIM = 14
C_FIXED_RE = 15
C_FIXED_IM = 16
N_CFLOAT = 17

# converter int columns
CI_NODE = 0
CI_MODE = 1  # 0 steady-state control law, 1 fixed common-frame current
CI_VAC_ON = 2
CI_IDMODE = 3  # 0 literal I_max/P_max/u_dc, 1 ac-power form
CI_DROOP = 4  # 0 none, 1 QV, 2 PV_QV
N_CINT = 5

# load float columns (per node)
L_P = 0
L_Q = 1
L_ICC_D = 2
L_ICC_Q = 3
N_LFLOAT = 4
