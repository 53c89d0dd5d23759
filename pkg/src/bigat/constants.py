#  CONSTANTS REFERENCED THROUGHOUT THE CODE

# Trajectory protocol: 8 observed steps, 12 predicted, 0.4 s apart
T_OBS = 8
T_FUT = 12
T_TOTAL = T_OBS + T_FUT
TIMESTEP_SECONDS = 0.4

SCENE_NAMES = ("eth", "hotel", "univ", "zara1", "zara2")
GRID_FILE_NAME = "scene.grid"

CHECKPOINT_MAGIC = b"BIGAT1"

METRICS_CSV_COLUMNS = ["scene", "k", "ade", "fde", "n_pedestrians"]
TRAJECTORY_CSV_COLUMNS = ["z_index", "ped_id", "t", "x", "y"]
TRAINING_LOG_COLUMNS = [
    "step",
    "L_gan1",
    "L_z",
    "L_gan2",
    "L_traj",
    "L_kl",
    "D_local",
    "D_global",
    "total",
]
MODE_LABEL_COLUMNS = ["scene_id", "mode"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

LEAKY_RELU_SLOPE = 0.2

# Loss weights and optimizer defaults
DEFAULT_LAMBDA_Z = 0.5
DEFAULT_LAMBDA_TRAJ = 10.0
DEFAULT_LAMBDA_KL = 0.01
DEFAULT_LEARNING_RATE = 1e-3
DEFAULT_BETAS = (0.5, 0.999)
DEFAULT_ADAM_EPS = 1e-8

MODEL_VARIANTS = ("social-bigat", "gat", "bigan")
