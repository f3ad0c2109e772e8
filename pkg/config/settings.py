import os
from dotenv import load_dotenv

from src.errors import ConfigError

load_dotenv()

# Versioning
TOOLKIT_VERSION = "1.0.0"
MODEL_FORMAT_VERSION = 1

# Logging Configuration
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOGS_DIR = os.getenv("RISK_LOGS_DIR", os.path.join(os.path.dirname(os.path.dirname(__file__)), "logs"))

# Run Configuration
OUTPUT_DIR_OVERRIDE = os.getenv("RISK_OUTPUT_DIR", "")
DEFAULT_THREADS = int(os.getenv("RISK_THREADS", "1"))
DEFAULT_SEED = 42

# Bundled cohort shape
BUNDLED_COHORT_ROWS = 9474
BUNDLED_COHORT_PREVALENCE = 0.162

# Output file names
MODEL_FILE = "model.json"
REPORT_JSON_FILE = "report.json"
REPORT_TEXT_FILE = "report.txt"
RESOLVED_CONFIG_FILE = "resolved_config.json"


# Validation
def validate_config():
    """Validate environment-level settings."""
    problems = []

    if LOG_LEVEL.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        problems.append(f"LOG_LEVEL={LOG_LEVEL}")
    if DEFAULT_THREADS < 1:
        problems.append(f"RISK_THREADS={DEFAULT_THREADS}")

    if problems:
        raise ConfigError(f"Invalid environment settings: {', '.join(problems)}", stage="config")

    return True
