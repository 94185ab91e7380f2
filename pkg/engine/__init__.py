"""Meta-learning engine: autodiff graph, task learners, task distributions and the MAML loop."""
