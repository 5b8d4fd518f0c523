"""KatzGPT: a decoder-only transformer with adaptive-bias attention, built
from scratch on numpy with hand-written gradients, plus the surrounding
system: corpus tooling, training + sequential fine-tuning, ROUGE evaluation,
a multilingual chat pipeline, and an HTTP chat service."""

__version__ = "0.1.0"
