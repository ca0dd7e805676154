"""Run the sidecar from the command line: ``python -m vecqa_sidecar``."""

import uvicorn

from .config import SidecarConfig
from .server import make_app


def main() -> None:
    config = SidecarConfig.from_env()
    uvicorn.run(make_app(config), host=config.host, port=config.port)


if __name__ == "__main__":
    main()
