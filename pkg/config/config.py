## Configuration module for the QQL toolkit.

import os
import logging
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


## Centralized configuration for the toolkit
class Config:

    # Training defaults
    DEFAULT_GAMMA: float = float(os.getenv('QQL_GAMMA', '0.99'))
    DEFAULT_TAU: float = float(os.getenv('QQL_TAU', '0.005'))
    DEFAULT_BATCH_SIZE: int = int(os.getenv('QQL_BATCH_SIZE', '256'))
    DEFAULT_LR: float = float(os.getenv('QQL_LR', '3e-4'))
    DEFAULT_LAMBDA: float = float(os.getenv('QQL_LAMBDA', '1.0'))
    DEFAULT_ZETA: float = float(os.getenv('QQL_ZETA', '1.0'))
    DEFAULT_BETA_LOW: float = float(os.getenv('QQL_BETA_LOW', '0.1'))
    DEFAULT_WEIGHT_CAP: float = float(os.getenv('QQL_WEIGHT_CAP', '100'))
    DEFAULT_HIDDEN_DIM: int = int(os.getenv('QQL_HIDDEN_DIM', '256'))
    DEFAULT_HIDDEN_LAYERS: int = int(os.getenv('QQL_HIDDEN_LAYERS', '2'))
    DEFAULT_STEPS: int = int(os.getenv('QQL_STEPS', '20000'))
    DEFAULT_SEED: int = int(os.getenv('QQL_SEED', '0'))

    # XQL baseline temperature (the single consistent setting)
    DEFAULT_XQL_BETA: float = float(os.getenv('XQL_BETA', '2.0'))
    XQL_EXP_CLAMP: float = 5.0

    # Adaptive optimizer moments
    ADAM_BETA1: float = 0.9
    ADAM_BETA2: float = 0.999
    ADAM_EPS: float = 1e-8

    # Gaussian policy head
    LOG_STD_MIN: float = -5.0
    LOG_STD_MAX: float = 2.0

    # Evaluation
    EVAL_INTERVAL: int = int(os.getenv('QQL_EVAL_INTERVAL', '1000'))
    EVAL_EPISODES: int = int(os.getenv('QQL_EVAL_EPISODES', '10'))
    REFERENCE_EPISODES: int = int(os.getenv('QQL_REFERENCE_EPISODES', '100'))

    # Gumbel fitting and goodness of fit
    MLE_TOLERANCE: float = 1e-9
    MLE_MAX_ITER: int = 200
    MLE_MIN_SAMPLES: int = 10
    KS_SERIES_TERMS: int = 100
    BETA_TOY_MIN_ACTIONS: int = 500

    # Value iteration oracle
    VI_TOLERANCE: float = 1e-10
    VI_MAX_ITER: int = 100000

    # Output layout
    OUTPUT_DIR: Path = Path(os.getenv('QQL_OUTPUT_DIR', 'runs'))
    MANIFEST_FILE: str = 'manifest.json'
    METRICS_FILE: str = 'metrics.csv'
    EVAL_FILE: str = 'eval.csv'
    FINAL_CKPT_FILE: str = 'ckpt_final.json'
    BEST_CKPT_FILE: str = 'ckpt_best.json'
    REFERENCES_FILE: str = 'references.json'
    META_SUFFIX: str = '.meta.json'

    # Plotting
    SVG_WIDTH: int = 800
    SVG_HEIGHT: int = 500
    SVG_TICKS: int = 6

    # Logging Configuration
    LOG_LEVEL: str = os.getenv('LOG_LEVEL', 'INFO')
    LOG_FORMAT: str = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


    ## Hidden layer sizes implied by the defaults
    @classmethod
    def default_hidden_dims(cls) -> list:
        return [cls.DEFAULT_HIDDEN_DIM] * cls.DEFAULT_HIDDEN_LAYERS


    ## Path of the metadata sidecar for a dataset file
    @classmethod
    def meta_path_for(cls, dataset_path: Path) -> Path:
        dataset_path = Path(dataset_path)
        return dataset_path.with_name(dataset_path.stem + cls.META_SUFFIX)


    ## Validate the configuration settings
    @classmethod
    def validate_config(cls) -> bool:
        try:
            if not 0.0 <= cls.DEFAULT_GAMMA < 1.0:
                print(f"Invalid QQL_GAMMA: {cls.DEFAULT_GAMMA}")
                return False

            if not 0.0 <= cls.DEFAULT_TAU <= 1.0:
                print(f"Invalid QQL_TAU: {cls.DEFAULT_TAU}")
                return False

            if cls.DEFAULT_BATCH_SIZE < 1 or cls.DEFAULT_HIDDEN_DIM < 1 or cls.DEFAULT_HIDDEN_LAYERS < 1:
                print("Batch size and network sizes must be positive")
                return False

            if cls.DEFAULT_LR <= 0 or cls.DEFAULT_BETA_LOW <= 0 or cls.DEFAULT_WEIGHT_CAP <= 0:
                print("Learning rate, beta_low and weight cap must be positive")
                return False

            if cls.DEFAULT_LAMBDA < 0 or cls.DEFAULT_ZETA <= 0 or cls.DEFAULT_XQL_BETA <= 0:
                print("lambda must be non-negative; zeta and the XQL beta must be positive")
                return False

            if cls.EVAL_INTERVAL < 1 or cls.EVAL_EPISODES < 1:
                print("Evaluation interval and episodes must be positive")
                return False

            valid_log_levels = ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']
            if cls.LOG_LEVEL not in valid_log_levels:
                print(f"Invalid LOG_LEVEL: {cls.LOG_LEVEL}")
                return False

            return True

        except Exception as e:
            print(f"Configuration validation error: {e}")
            return False


## Apply the configured log level and format to the root logger
def configure_logging(level: str = None) -> None:
    logging.basicConfig(
        level=getattr(logging, (level or Config.LOG_LEVEL).upper(), logging.INFO),
        format=Config.LOG_FORMAT,
        force=True,
    )


# Create a global config instance
config = Config()


# Validate configuration on import
if not config.validate_config():
    print("Warning: Configuration validation failed. Please check your settings.")
