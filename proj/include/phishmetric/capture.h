#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "phishmetric/corpus.h"

namespace phishmetric {

struct Viewport {
  int width = 1280;
  int height = 960;
};

// Renders a URL into a lossless image file.
class CaptureBackend {
 public:
  virtual ~CaptureBackend() = default;
  virtual std::string name() const = 0;
  virtual void render(const std::string& url, const Viewport& viewport, const std::filesystem::path& out,
                      double timeout_seconds) const = 0;
};

// Runs an external renderer. The template is split on whitespace and
// {url}, {width}, {height} and {out} are substituted per argument; no
// shell is involved. Exceeding the timeout kills the process.
class CommandCaptureBackend final : public CaptureBackend {
 public:
  explicit CommandCaptureBackend(std::string command_template, std::string name = "command");
  std::string name() const override { return name_; }
  void render(const std::string& url, const Viewport& viewport, const std::filesystem::path& out,
              double timeout_seconds) const override;

  static constexpr const char* kFirefoxTemplate =
      "firefox --headless --window-size={width},{height} --screenshot {out} {url}";

 private:
  std::string template_;
  std::string name_;
};

struct CaptureOptions {
  Viewport viewport;
  double timeout_seconds = 30;
  bool preflight = true;  // check reachability and content type first
};

// Checks that the URL serves HTML. data: and file: URLs are inspected
// locally, http(s) through a HEAD request. Throws navigation_timeout or
// non_html with the URL in the message.
void preflight_url(const std::string& url, double timeout_seconds);

// Captures `url` into `out_path` and returns its manifest record. Calls for
// the same URL are serialised.
Screenshot capture_screenshot(const std::string& url, const std::filesystem::path& out_path,
                              const std::string& record_id, const CaptureBackend& backend,
                              const CaptureOptions& options = {});

}  // namespace phishmetric
