#pragma once

#define DECMET_VERSION_MAJOR 0
#define DECMET_VERSION_MINOR 1
#define DECMET_VERSION_PATCH 0
#define DECMET_VERSION "0.1.0"

namespace decmet {

inline const char* version() { return DECMET_VERSION; }

}  // namespace decmet
