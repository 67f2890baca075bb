#include "phishmetric/capture.h"

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

#include <curl/curl.h>

#include "phishmetric/error.h"
#include "phishmetric/image.h"
#include "phishmetric/log.h"
#include "phishmetric/util.h"

extern char** environ;

namespace phishmetric {
namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

std::string substitute(std::string arg, const std::map<std::string, std::string>& vars) {
  for (const auto& [key, value] : vars) {
    for (std::size_t pos = arg.find(key); pos != std::string::npos; pos = arg.find(key, pos + value.size())) {
      arg.replace(pos, key.size(), value);
    }
  }
  return arg;
}

std::mutex& url_mutex(const std::string& url) {
  static std::mutex registry_mutex;
  static std::map<std::string, std::unique_ptr<std::mutex>> registry;
  std::lock_guard lock(registry_mutex);
  auto& m = registry[url];
  if (!m) m = std::make_unique<std::mutex>();
  return *m;
}

std::size_t discard(char*, std::size_t size, std::size_t n, void*) { return size * n; }

}  // namespace

CommandCaptureBackend::CommandCaptureBackend(std::string command_template, std::string name)
    : template_(std::move(command_template)), name_(std::move(name)) {
  if (trim(template_).empty()) throw Error(errc::kInvalidArgument, "empty capture command");
}

void CommandCaptureBackend::render(const std::string& url, const Viewport& viewport, const std::filesystem::path& out,
                                   double timeout_seconds) const {
  const std::map<std::string, std::string> vars = {{"{url}", url},
                                                   {"{width}", std::to_string(viewport.width)},
                                                   {"{height}", std::to_string(viewport.height)},
                                                   {"{out}", out.string()}};
  std::vector<std::string> args;
  for (const std::string& part : split(template_, ' ')) {
    if (!part.empty()) args.push_back(substitute(part, vars));
  }
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);

  pid_t pid = 0;
  if (const int rc = posix_spawnp(&pid, argv[0], nullptr, nullptr, argv.data(), environ); rc != 0) {
    throw Error(errc::kCaptureBackend, "cannot start capture command '" + args[0] + "': " + std::strerror(rc));
  }
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_seconds);
  int status = 0;
  while (true) {
    const pid_t r = waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0) throw Error(errc::kCaptureBackend, "waitpid failed for capture of " + url);
    if (std::chrono::steady_clock::now() >= deadline) {
      kill(pid, SIGKILL);
      waitpid(pid, &status, 0);
      throw Error(errc::kCaptureTimeout, "navigation timeout after " + std::to_string(timeout_seconds) + "s: " + url);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw Error(errc::kCaptureBackend, "capture command failed (status " + std::to_string(status) + ") for " + url);
  }
}

void preflight_url(const std::string& url, double timeout_seconds) {
  const std::string u = lower(url);
  if (starts_with(u, "data:")) {
    const std::string mime = u.substr(5, u.find_first_of(";,") - 5);
    if (mime != "text/html") throw Error(errc::kNonHtml, "not an HTML page (" + mime + "): " + url);
    return;
  }
  if (starts_with(u, "file://")) {
    const std::filesystem::path p = url.substr(7);
    if (!std::filesystem::exists(p)) throw Error(errc::kCaptureTimeout, "navigation failed, no such file: " + url);
    const std::string ext = lower(p.extension().string());
    if (ext != ".html" && ext != ".htm") throw Error(errc::kNonHtml, "not an HTML page: " + url);
    return;
  }
  if (!starts_with(u, "http://") && !starts_with(u, "https://")) {
    throw Error(errc::kInvalidArgument, "unsupported URL scheme: " + url);
  }
  static std::once_flag init;
  std::call_once(init, [] { curl_global_init(CURL_GLOBAL_DEFAULT); });
  std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), curl_easy_cleanup);
  if (!curl) throw Error(errc::kCaptureBackend, "curl initialisation failed");
  curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl.get(), CURLOPT_NOBODY, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_TIMEOUT_MS, static_cast<long>(timeout_seconds * 1000));
  curl_easy_setopt(curl.get(), CURLOPT_NOSIGNAL, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, discard);
  const CURLcode rc = curl_easy_perform(curl.get());
  if (rc != CURLE_OK) {
    throw Error(errc::kCaptureTimeout, std::string("navigation timeout (") + curl_easy_strerror(rc) + "): " + url);
  }
  char* type = nullptr;
  curl_easy_getinfo(curl.get(), CURLINFO_CONTENT_TYPE, &type);
  const std::string content_type = type ? lower(type) : "";
  if (content_type.rfind("text/html", 0) != 0 && content_type.rfind("application/xhtml", 0) != 0) {
    throw Error(errc::kNonHtml, "not an HTML page (" + (content_type.empty() ? "no content type" : content_type) +
                                    "): " + url);
  }
}

Screenshot capture_screenshot(const std::string& url, const std::filesystem::path& out_path,
                              const std::string& record_id, const CaptureBackend& backend,
                              const CaptureOptions& options) {
  if (options.viewport.width < 1 || options.viewport.height < 1) {
    throw Error(errc::kInvalidArgument, "viewport must be positive");
  }
  std::lock_guard lock(url_mutex(url));
  if (options.preflight) preflight_url(url, options.timeout_seconds);
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  const std::filesystem::path tmp = out_path.string() + ".part.png";
  backend.render(url, options.viewport, tmp, options.timeout_seconds);
  if (!std::filesystem::exists(tmp)) {
    throw Error(errc::kCaptureBackend, "capture backend produced no image for " + url);
  }
  // Decoding validates the output before it is published.
  decode_image(tmp);
  std::filesystem::rename(tmp, out_path);

  Screenshot s;
  s.record_id = record_id;
  s.image_path = out_path;
  s.url = url;
  s.capture_meta["browser"] = backend.name();
  s.capture_meta["viewport"] = std::to_string(options.viewport.width) + "x" + std::to_string(options.viewport.height);
  log_event(LogLevel::kInfo, "captured", {{"url", url}, {"path", out_path.string()}, {"backend", backend.name()}});
  return s;
}

}  // namespace phishmetric
