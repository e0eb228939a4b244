"""
Validation helpers: parse raw data with Pydantic schemas, converting
validation errors to difflab's ValidationError.
"""

from __future__ import annotations

from typing import Any, Type, TypeVar

from pydantic import BaseModel
from pydantic import ValidationError as PydanticValidationError

from apps.core.exceptions import ValidationError as AppValidationError

T = TypeVar("T", bound=BaseModel)


"""
GOAL: Validate a configuration mapping using a Pydantic schema and convert errors to app ValidationError.

PARAMETERS:
  schema_class: Type[T] - Pydantic model class - Must be a BaseModel subclass
  data: dict[str, Any] - Raw configuration (JSON file merged with CLI flags)

RETURNS:
  T - Validated model - Never None

RAISES:
  AppValidationError: If validation fails, with per-field messages

GUARANTEES:
  - None values are treated as "not given" so schema defaults apply
  - Original Pydantic error details are preserved in details["validation_errors"]
"""
def validate_config(schema_class: Type[T], data: dict[str, Any]) -> T:
    """
    Drop unset values, validate, and re-raise Pydantic errors as AppValidationError.
    """
    cleaned = {key: value for key, value in data.items() if value is not None}

    try:
        return schema_class.model_validate(cleaned)
    except PydanticValidationError as exc:
        errors = exc.errors(include_url=False)
        error_messages = []

        for error in errors:
            field = " -> ".join(str(loc) for loc in error["loc"]) or "config"
            error_messages.append(f"{field}: {error['msg']}")

        raise AppValidationError(
            f"Validation failed: {'; '.join(error_messages)}",
            details={"validation_errors": [
                {"loc": [str(loc) for loc in error["loc"]], "msg": error["msg"], "type": error["type"]}
                for error in errors
            ]},
        ) from exc
