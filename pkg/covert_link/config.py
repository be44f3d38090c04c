"""Configuration module for the covert link simulator."""

import os
import dotenv
from pathlib import Path

# Load environment variables from .env file
dotenv.load_dotenv(Path(__file__).parent.parent / '.env')

# Logging settings
LOG_LEVEL = os.getenv('COVERT_LINK_LOG_LEVEL', 'INFO')

# Run settings
DEFAULT_SEED = int(os.getenv('COVERT_LINK_SEED', '0'))
OUTPUT_DIR = Path(os.getenv('COVERT_LINK_OUTPUT_DIR', Path(__file__).parent.parent / 'results'))
CAPTURE_SYMBOLS = int(os.getenv('COVERT_LINK_CAPTURE_SYMBOLS', '100000'))

# Time base: one transmission opportunity per subframe
SUBFRAME_SECONDS = 0.001
DEFAULT_OPPORTUNITY_SYMBOLS = 1200
DEFAULT_DURATION_SUBFRAMES = 20000

# Covert modulation settings
HEADER_DISTANCE = 0.16
DEFAULT_FLAG_TABLE = 'standard'
KS_REDUCTION_TARGET = 3.0

# Wire format settings
MAX_PAYLOAD_LEN = 65535

# Link settings
DEFAULT_TIMEOUT_SUBFRAMES = 20
DEFAULT_MAX_RETRIES = 8
DEFAULT_WINDOW = 1
MAX_WINDOW = 512
DEFAULT_AUTH_ATTEMPTS = 4
DEFAULT_ACK_REPEATS = 2

# Security settings
MIN_PSK_LEN = 16
DEFAULT_PSK = os.getenv('COVERT_LINK_PSK', '000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f')
BS_MSIN = 0x0000000001
UE_MSIN = 0x0000000002
