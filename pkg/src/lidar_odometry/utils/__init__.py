from .log import config_logging
