#pragma once

#include <string>

#include "vfiqa/annotation.h"

namespace httplib {
class Server;
}

namespace vfiqa {

// GET  /api/session/{annotator}/next
// POST /api/judgment  {"session", "triplet_id", "choice"}
// GET  /clips/{clip_id}/frame_{n}.png
void install_routes(httplib::Server& server, AnnotationService& service);

// Descriptor JSON as served by the next endpoint.
std::string descriptor_json(const TripletDescriptor& d);

}  // namespace vfiqa
