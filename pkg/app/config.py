# Pydantic v2 - BaseSettings lives in pydantic-settings
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict


class Settings(BaseSettings):
    """Library-wide defaults. Values come from code or a config file, never the environment."""

    model_config = SettingsConfigDict(extra="forbid", frozen=True)

    # Field geometry
    resolution: int = 16
    channels: int = 32
    init_scale: float = 0.1
    domain_tolerance: float = 1e-9

    # Neighborhoods: K scales with the point count, 64 neighbors for 2048 points
    base_k: int = 64
    base_n: int = 2048
    min_k: int = 4
    knn_block_rows: int = 256

    # Pretext training
    n_s: int = 24
    n_out: int = 256
    epochs: int = 150
    base_lr: float = 0.001
    decay_factor: float = 0.2
    decay_every_epochs: int = 50
    batch_size: int = 8
    eval_fraction: float = 0.2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    normal_eps: float = 1e-12

    # Adapters
    min_surface_samples: int = 2048
    surface_samples_per_vertex: int = 4
    radius_voxels: int = 4

    # Probes
    ellipsoid_n_theta: int = 32
    ellipsoid_n_phi: int = 64
    probe_epochs: int = 200
    probe_train_fraction: float = 0.8
    probe_batch_size: int = 16

    seed: int = 0

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


settings = Settings()
