from .base import ProviderDescriptor, TextRequest, build_provider_bundle
from .simulator import SimulatedProvider, SimulatorFixtures
from .remote import RemoteProvider, ResponseCache

__all__ = [
    "ProviderDescriptor",
    "TextRequest",
    "SimulatedProvider",
    "SimulatorFixtures",
    "RemoteProvider",
    "ResponseCache",
    "build_provider_bundle",
]
