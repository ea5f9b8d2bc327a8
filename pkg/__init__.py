
__version__ = "1.0.0"

from utils import Config, ConnectionStats, Endpoint
