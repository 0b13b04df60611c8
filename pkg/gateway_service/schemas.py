#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Cuerpos de petición de los endpoints /v1 (validados antes de tocar el motor)"""

from typing import Any, List, Optional, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field, StrictStr, ValidationError

Id = StrictStr


class _Body(BaseModel):
    model_config = ConfigDict(extra="forbid", str_strip_whitespace=False)


class RegisterIn(_Body):
    tenant: Id = Field(min_length=1)
    name: Id = Field(min_length=1)
    designation: StrictStr = ""
    employee_id: Id = Field(min_length=1)


class PasswordIn(_Body):
    registration_token: Id = Field(min_length=1)
    password: StrictStr


class LoginIn(_Body):
    tenant: Id = Field(min_length=1)
    user: Id = Field(min_length=1)
    password: StrictStr
    location: Optional[StrictStr] = None
    roles: Optional[List[Id]] = None


class ActivateIn(_Body):
    task: Id = Field(min_length=1)
    process_instance: Optional[Id] = None


class AccessIn(_Body):
    instance: Id = Field(min_length=1)
    operation: Id = Field(min_length=1)
    object: Id = Field(min_length=1)


class CompleteIn(_Body):
    instance: Id = Field(min_length=1)


class DelegateIn(_Body):
    instance: Id = Field(min_length=1)
    to_user: Id = Field(min_length=1)


BodyT = TypeVar("BodyT", bound=BaseModel)


class MalformedBody(ValueError):
    """Cuerpo que no cumple el esquema; el mensaje solo nombra campos"""


def parse_body(model: Type[BodyT], body: Any) -> BodyT:
    if not isinstance(body, dict):
        raise MalformedBody("Se esperaba un objeto JSON")
    try:
        return model.model_validate(body)
    except ValidationError as exc:
        # Sin 'input': el cuerpo puede traer una contraseña
        fields = sorted({".".join(str(p) for p in err["loc"]) or "<body>" for err in exc.errors()})
        raise MalformedBody(f"Campos inválidos: {', '.join(fields)}") from None
