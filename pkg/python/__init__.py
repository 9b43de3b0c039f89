# Copyright © 2026 kobt contributors
# SPDX-License-Identifier: Apache 2.0

import logging

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())
