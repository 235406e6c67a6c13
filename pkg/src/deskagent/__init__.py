"""deskagent: hierarchical language-conditioned tabletop manipulation.

A toy simulated workspace, a scripted play-data pipeline with hindsight goal
relabeling, a visuo-lingual affordance model, a multi-context imitation
policy, an alpha-gated hybrid controller, a few-shot task decomposer, and a
chain-based evaluation rig.
"""

__version__ = "0.1.0"
