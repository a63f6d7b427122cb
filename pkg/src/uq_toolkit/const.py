SYMMETRY_TOLERANCE = 1e-9
PROB_SUM_TOLERANCE = 1e-9
# Relative Cholesky pivot below which a matrix is treated as singular.
PIVOT_TOLERANCE = 1e-12
# Probabilities below this are exact zeros inside the entropy log.
PROB_ZERO_FLOOR = 1e-12
MI_CLAMP_TOLERANCE = 1e-9
NORMAL_DF_THRESHOLD = 1e6
# Guards ceil((n + 1)(1 - alpha)) against float dust such as 9.000000000000002.
RANK_EPSILON = 1e-9

# Child-stream namespaces under a master seed.
STREAM_FOREST = 0
STREAM_BNN_INIT = 1
STREAM_BNN_EPOCH = 2
STREAM_BNN_MC = 3
STREAM_SPLIT = 4
STREAM_SYNTH = 5
STREAM_SUBSAMPLE = 6

DEFAULT_SEED = 2024
DEFAULT_ALPHA = 0.1
DEFAULT_TREES = 100
DEFAULT_MAX_DEPTH = 2
DEFAULT_MC_PASSES = 50
DEFAULT_HIDDEN = (100, 100, 100)

CSV_FLOAT_FORMAT = "%.17g"

MANIFEST_FILE = "manifest.json"
SUMMARY_FILE = "summary.json"

COVERTYPE_TARGET = "Cover_Type"
IRIS_TARGET = "species"
IRIS_TEST_FLOWER = (5.6, 3.0, 4.1, 1.3)
VERSICOLOR = 1

EXIT_OK = 0
EXIT_DOMAIN_ERROR = 1
EXIT_USAGE_ERROR = 2
EXIT_IO_ERROR = 3

ENV_COVERTYPE = "UQ_TOOLKIT_COVERTYPE"
