"""Multi-agent simulation of cognitively impaired indoor wayfinding with
nurse and smart-watch assistance."""

__version__ = "0.1.0"
