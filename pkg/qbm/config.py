from dotenv import load_dotenv
import os
load_dotenv()

class Settings:
    LOG_LEVEL = os.getenv("QBM_LOG_LEVEL", "INFO")

    # adaptive quadrature (QUADPACK through scipy.integrate.quad)
    QUAD_EPSABS = float(os.getenv("QBM_QUAD_EPSABS", "1e-10"))
    QUAD_EPSREL = float(os.getenv("QBM_QUAD_EPSREL", "1e-10"))
    QUAD_LIMIT = int(os.getenv("QBM_QUAD_LIMIT", "400"))
    QUAD_TRIES = int(os.getenv("QBM_QUAD_TRIES", "3"))

    # default truncation budget for series
    MAX_TERMS = int(os.getenv("QBM_MAX_TERMS", "100000"))
    ABS_TOL = float(os.getenv("QBM_ABS_TOL", "1e-12"))
    REL_TOL = float(os.getenv("QBM_REL_TOL", "1e-10"))

    # numerical inverse Laplace
    TALBOT_DEGREE = int(os.getenv("QBM_TALBOT_DEGREE", "34"))
    DEHOOG_ORDER = int(os.getenv("QBM_DEHOOG_ORDER", "24"))
    FALLBACK_TOL = float(os.getenv("QBM_FALLBACK_TOL", "1e-8"))

    SINGULAR_THRESHOLD = float(os.getenv("QBM_SINGULAR_THRESHOLD", "1e-10"))

    THREADS = int(os.getenv("QBM_THREADS", "1"))
    PROGRESS = os.getenv("QBM_PROGRESS", "1") not in ("0", "false", "False", "")
    CHUNK = int(os.getenv("QBM_CHUNK", "256"))

settings = Settings()
