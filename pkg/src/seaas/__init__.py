"""Security-as-a-service for simulated mobile devices: a cloud policy engine,
an offload wire protocol, a device agent, and a trial bench."""

__version__ = "0.1.0"
