from src.attack.pgd import (  # noqa: F401
    PerturbationBudget,
    adversarial_loss,
    pgd_perturb,
    project_ball,
)
