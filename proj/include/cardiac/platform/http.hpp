#pragma once

#include <functional>
#include <memory>
#include <string>

#include "cardiac/platform/service.hpp"

namespace httplib {
class Server;
}

namespace cardiac::platform {

/// JSON API over the service. Routes are registered on construction.
class HttpApi {
 public:
  explicit HttpApi(Service& service);
  ~HttpApi();

  /// Binds (port 0 picks a free port), reports the bound port, then blocks serving.
  void listen(const std::string& host, int port, const std::function<void(int)>& on_bound = {});
  void stop();

 private:
  Service& service_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace cardiac::platform
