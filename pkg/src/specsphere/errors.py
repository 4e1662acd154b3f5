"""Exception types shared across the toolkit."""


class SpecSphereError(Exception):
    pass


class ShapeError(SpecSphereError, ValueError):
    pass


class InputError(SpecSphereError, ValueError):
    pass


class ContractError(SpecSphereError, ValueError):
    pass


class ValidationError(SpecSphereError, ValueError):
    pass


class FormatError(SpecSphereError, ValueError):
    pass


class NumericalError(SpecSphereError, ArithmeticError):
    pass
