"""Static malware analysis over API-call sequences mined from control-flow graphs."""

__version__ = "0.1.0"
