from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from config import settings
from models.field import FieldGrid, InitScheme
from models.probes import ProbeMode
from models.training import PretextConfig
from services.errors import InvalidArgumentError

GRID_MAGIC = b"RASF"
GRID_VERSION = 1
GRID_HEADER_BYTES = 16

Precision = Literal[4, 8]


class GridFile(BaseModel):
    """A grid as stored on disk: header fields plus the values."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    magic: bytes = GRID_MAGIC
    version: int = GRID_VERSION
    resolution: int
    channels: int
    precision: Precision = 4
    grid: FieldGrid

    @property
    def n_bytes(self) -> int:
        return GRID_HEADER_BYTES + self.precision * self.resolution**3 * self.channels


class RunConfig(BaseSettings):
    """
    Everything a CLI run needs. Loaded from a JSON config file and/or flags;
    flags win. The pretext block is echoed into every training report.
    """

    model_config = SettingsConfigDict(extra="forbid")

    pretext: PretextConfig = Field(default_factory=PretextConfig)

    data_dir: Optional[Path] = None
    out_grid: Optional[Path] = None
    report_path: Optional[Path] = None
    recon_dir: Optional[Path] = None

    resolution: int = Field(default=settings.resolution, ge=2)
    channels: int = Field(default=settings.channels, ge=1)
    init_scheme: InitScheme = "uniform"
    init_scale: float = Field(default=settings.init_scale, ge=0)
    precision: Precision = 4

    # Adapters; the neighborhood size lives in pretext.k
    n_samples: Optional[int] = Field(default=None, ge=1)
    radius_voxels: int = Field(default=settings.radius_voxels, ge=1)

    # Probes
    probe_mode: ProbeMode = "flatten_fc"
    probe_epochs: int = Field(default=settings.probe_epochs, ge=1)
    n_theta: int = Field(default=settings.ellipsoid_n_theta, ge=2)
    n_phi: int = Field(default=settings.ellipsoid_n_phi, ge=1)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return (init_settings,)

    @classmethod
    def build(cls, file_values: dict[str, Any], **overrides: Any) -> "RunConfig":
        """
        Merge config-file values with flag overrides (None means "not given").
        Keys of the pretext block may also appear at top level.
        """
        pretext = dict(file_values.get("pretext", {}))
        top: dict[str, Any] = {}
        flat = [(k, v) for k, v in file_values.items() if k != "pretext"]
        for key, value in flat + list(overrides.items()):
            if value is None:
                continue
            if key in PretextConfig.model_fields:
                pretext[key] = value
            else:
                top[key] = value
        try:
            return cls(pretext=PretextConfig(**pretext), **top)
        except ValidationError as e:
            first = e.errors()[0]
            where = ".".join(str(p) for p in first["loc"])
            raise InvalidArgumentError(f"invalid run config {where}: {first['msg']}") from e
