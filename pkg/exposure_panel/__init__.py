# Spatial panel causal-inference engine for neighborhood GenAI exposure

__version__ = '0.1.0'
