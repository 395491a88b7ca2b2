"""U2F-gated provisioning of IoT devices, simulated end to end."""

__version__ = "0.1.0"
