from .errors import ValidationError
