"""Exception types shared across the package."""


class IntegrationError(FloatingPointError):
    """A non-finite state appeared during time stepping."""

    def __init__(self, step, last_state, message="non-finite state"):
        super().__init__(f"{message} at step {step}")
        self.step = step
        self.last_state = last_state


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration, history=None, message="loss diverged"):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration
        self.history = list(history) if history is not None else []


class NonFiniteGradient(FloatingPointError):
    """An optimizer step was rejected because the gradient was not finite."""


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field
