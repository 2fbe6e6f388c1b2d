# Proxy-bridged anomaly detection package
__version__ = "1.0.0"
