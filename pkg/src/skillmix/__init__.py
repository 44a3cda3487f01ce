"""skillmix: composable dialogue-skill sequence models.

A small research toolkit that trains transformer sequence-to-sequence models
whose decoder is either a single parameter set, a recurrent mixture of
experts, an attention-weighted mixture of expert output representations, or a
single decoder whose parameters are an attention-weighted sum of expert
parameter sets.  Includes the data synthesis pipeline for API-call targets,
an evaluation suite, and a cost benchmark comparing the mixing strategies.
"""

__version__ = "0.1.0"
