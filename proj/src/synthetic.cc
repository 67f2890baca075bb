#include "phishmetric/synthetic.h"

#include <algorithm>
#include <array>
#include <random>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "phishmetric/error.h"
#include "phishmetric/log.h"

namespace phishmetric {
namespace {

struct Brand {
  std::string id;
  std::string wordmark;
  cv::Scalar primary, secondary, accent;
  int icon = 0;
  int font = cv::FONT_HERSHEY_SIMPLEX;
  // The brand's own sign-in page: card placement and backdrop.
  int login_style = 0;
  cv::Scalar login_backdrop;
};

using Rng = std::mt19937_64;

int uniform(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
double uniform_real(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

cv::Scalar hsv_color(double h, double s, double v) {
  cv::Mat hsv(1, 1, CV_8UC3, cv::Scalar(h / 2.0, s * 255, v * 255));
  cv::Mat bgr;
  cv::cvtColor(hsv, bgr, cv::COLOR_HSV2BGR);
  const auto px = bgr.at<cv::Vec3b>(0, 0);
  return {static_cast<double>(px[0]), static_cast<double>(px[1]), static_cast<double>(px[2])};
}

cv::Scalar jitter(const cv::Scalar& c, Rng& rng, int amount) {
  cv::Scalar out;
  for (int i = 0; i < 3; ++i) out[i] = std::clamp(c[i] + uniform(rng, -amount, amount), 0.0, 255.0);
  return out;
}

cv::Scalar light_color(Rng& rng) { return hsv_color(uniform(rng, 0, 359), uniform_real(rng, 0.0, 0.15), 0.97); }
cv::Scalar muted_color(Rng& rng) {
  return hsv_color(uniform(rng, 0, 359), uniform_real(rng, 0.1, 0.4), uniform_real(rng, 0.5, 0.85));
}

Brand make_brand(const std::string& id, Rng& rng) {
  static constexpr std::array<int, 4> kFonts = {cv::FONT_HERSHEY_SIMPLEX, cv::FONT_HERSHEY_DUPLEX,
                                                cv::FONT_HERSHEY_TRIPLEX, cv::FONT_HERSHEY_COMPLEX};
  Brand b;
  b.id = id;
  const int letters = uniform(rng, 3, 5);
  for (int i = 0; i < letters; ++i) b.wordmark.push_back(static_cast<char>('A' + uniform(rng, 0, 25)));
  const double hue = uniform(rng, 0, 359);
  b.primary = hsv_color(hue, uniform_real(rng, 0.6, 1.0), uniform_real(rng, 0.45, 0.85));
  b.secondary = hsv_color(std::fmod(hue + uniform(rng, 90, 270), 360.0), uniform_real(rng, 0.5, 1.0),
                          uniform_real(rng, 0.5, 0.9));
  b.accent = hsv_color(std::fmod(hue + 180, 360.0), uniform_real(rng, 0.7, 1.0), uniform_real(rng, 0.6, 1.0));
  b.icon = uniform(rng, 0, 5);
  b.font = kFonts[static_cast<std::size_t>(uniform(rng, 0, 3))];
  b.login_style = uniform(rng, 0, 2);
  b.login_backdrop = uniform(rng, 0, 1) ? b.primary * 0.35 + cv::Scalar(160, 160, 160) : light_color(rng);
  return b;
}

// Icon of side `s` at top-left `o`.
void draw_icon(cv::Mat& img, const Brand& b, cv::Point o, int s, const cv::Scalar& c1, const cv::Scalar& c2) {
  const cv::Point center = o + cv::Point(s / 2, s / 2);
  switch (b.icon) {
    case 0:
      cv::circle(img, center, s / 2, c1, cv::FILLED, cv::LINE_AA);
      cv::circle(img, center, s / 4, c2, cv::FILLED, cv::LINE_AA);
      break;
    case 1:
      cv::rectangle(img, cv::Rect(o.x, o.y, s, s), c1, cv::FILLED);
      cv::rectangle(img, cv::Rect(o.x + s / 4, o.y + s / 4, s / 2, s / 2), c2, cv::FILLED);
      break;
    case 2: {
      std::vector<cv::Point> tri = {o + cv::Point(s / 2, 0), o + cv::Point(s, s), o + cv::Point(0, s)};
      cv::fillConvexPoly(img, tri, c1, cv::LINE_AA);
      cv::circle(img, center + cv::Point(0, s / 6), s / 6, c2, cv::FILLED, cv::LINE_AA);
      break;
    }
    case 3: {
      std::vector<cv::Point> dia = {o + cv::Point(s / 2, 0), o + cv::Point(s, s / 2), o + cv::Point(s / 2, s),
                                    o + cv::Point(0, s / 2)};
      cv::fillConvexPoly(img, dia, c1, cv::LINE_AA);
      cv::line(img, o + cv::Point(s / 4, s / 2), o + cv::Point(3 * s / 4, s / 2), c2, std::max(2, s / 8), cv::LINE_AA);
      break;
    }
    case 4:
      cv::circle(img, center, s / 2, c1, std::max(3, s / 5), cv::LINE_AA);
      cv::rectangle(img, cv::Rect(o.x + s / 2 - s / 10, o.y, s / 5, s), c2, cv::FILLED);
      break;
    default:
      for (int i = 0; i < 3; ++i) {
        cv::rectangle(img, cv::Rect(o.x + i * s / 3, o.y + s - (i + 1) * s / 3, s / 3 - 1, (i + 1) * s / 3),
                      i == 1 ? c2 : c1, cv::FILLED);
      }
      break;
  }
}

// Logo at `o` with icon side `s`; returns its width.
int draw_logo(cv::Mat& img, const Brand& b, cv::Point o, int s, const cv::Scalar& c1, const cv::Scalar& c2,
              const cv::Scalar& text_color) {
  draw_icon(img, b, o, s, c1, c2);
  const double scale = s / 30.0;
  int baseline = 0;
  const cv::Size ts = cv::getTextSize(b.wordmark, b.font, scale, 2, &baseline);
  cv::putText(img, b.wordmark, o + cv::Point(s + s / 4, s / 2 + ts.height / 2), b.font, scale, text_color, 2,
              cv::LINE_AA);
  return s + s / 4 + ts.width;
}

void draw_text_lines(cv::Mat& img, cv::Rect area, Rng& rng, const cv::Scalar& color) {
  for (int y = area.y; y + 4 < area.y + area.height; y += uniform(rng, 8, 12)) {
    const int w = uniform(rng, area.width / 3, area.width);
    cv::rectangle(img, cv::Rect(area.x, y, w, 3), color, cv::FILLED);
  }
}

void draw_form(cv::Mat& img, cv::Rect card, Rng& rng, const cv::Scalar& button) {
  const int fields = uniform(rng, 2, 3);
  int y = card.y;
  for (int i = 0; i < fields; ++i) {
    cv::rectangle(img, cv::Rect(card.x, y, card.width, 16), cv::Scalar(250, 250, 250), cv::FILLED);
    cv::rectangle(img, cv::Rect(card.x, y, card.width, 16), cv::Scalar(170, 170, 170), 1);
    y += 24;
  }
  cv::rectangle(img, cv::Rect(card.x, y, card.width / 2 + uniform(rng, 0, card.width / 3), 18), button, cv::FILLED);
}

// The brand's sign-in page. `jit` > 0 gives an imitation: shifted
// geometry and perturbed colours.
cv::Mat login_page(const Brand& b, const DeskCorpusOptions& opt, Rng& rng, int jit) {
  const int W = opt.width, H = opt.height;
  auto shift = [&](int v) { return jit > 0 ? v + uniform(rng, -jit / 3, jit / 3) : v; };
  cv::Mat img(H, W, CV_8UC3, jit > 0 ? jitter(b.login_backdrop, rng, jit) : b.login_backdrop);
  const cv::Scalar c1 = jitter(b.secondary, rng, jit / 2), c2 = jitter(b.accent, rng, jit / 2);
  const cv::Scalar word = jitter(b.primary, rng, jit / 2), button = jitter(b.primary, rng, jit);
  const int icon = shift(30);
  if (b.login_style == 0) {  // centred card
    const cv::Rect card(shift(W / 2 - 85), shift(20), 170, H - 40);
    cv::rectangle(img, card, cv::Scalar(255, 255, 255), cv::FILLED);
    draw_logo(img, b, {card.x + 14, card.y + 10}, icon, c1, c2, word);
    draw_form(img, cv::Rect(card.x + 14, card.y + 30 + icon, card.width - 28, 90), rng, button);
  } else if (b.login_style == 1) {  // brand panel on the left
    const int split = shift(W * 2 / 5);
    cv::rectangle(img, cv::Rect(0, 0, split, H), jitter(b.primary, rng, jit), cv::FILLED);
    draw_logo(img, b, {shift(12), shift(H / 2 - 20)}, icon, c1, c2, cv::Scalar(255, 255, 255));
    draw_form(img, cv::Rect(split + 16, shift(70), W - split - 36, 90), rng, button);
  } else {  // header bar over a wide form
    const int header = shift(46);
    cv::rectangle(img, cv::Rect(0, 0, W, header), jitter(b.primary, rng, jit), cv::FILLED);
    draw_logo(img, b, {shift(W / 2 - 50), (header - icon) / 2}, icon, c1, c2, cv::Scalar(255, 255, 255));
    draw_form(img, cv::Rect(shift(W / 4), header + 30, W / 2, 90), rng, button);
  }
  return img;
}

cv::Mat trusted_page(const Brand& b, const DeskCorpusOptions& opt, Rng& rng) {
  // A brand's own sign-in page drifts a little between captures (redesigns,
  // locales, banners).
  if (uniform(rng, 0, 2) == 0) return login_page(b, opt, rng, uniform(rng, 0, 12));
  const int W = opt.width, H = opt.height;
  cv::Mat img(H, W, CV_8UC3, uniform(rng, 0, 3) == 0 ? light_color(rng) : cv::Scalar(255, 255, 255));
  const int header = uniform(rng, 40, 52);
  cv::rectangle(img, cv::Rect(0, 0, W, header), b.primary, cv::FILLED);
  const int logo_x = uniform(rng, 0, 3) == 0 ? W / 2 - 60 : uniform(rng, 6, 16);
  draw_logo(img, b, {logo_x, (header - 28) / 2}, 28, b.secondary, b.accent, cv::Scalar(255, 255, 255));
  for (int i = 0; i < uniform(rng, 2, 4); ++i) {
    cv::rectangle(img, cv::Rect(W - 40 - i * 44, header / 2 - 3, 34, 6), cv::Scalar(235, 235, 235), cv::FILLED);
  }
  const int layout = uniform(rng, 0, 3);
  const cv::Scalar text(120, 120, 120);
  switch (layout) {
    case 0:  // sign-in
      draw_text_lines(img, cv::Rect(16, header + 14, W / 2 - 30, H - header - 40), rng, text);
      draw_form(img, cv::Rect(W / 2 + 10, header + 20, W / 2 - 30, 90), rng, b.primary);
      break;
    case 1:  // hero banner
      cv::rectangle(img, cv::Rect(0, header, W, H / 3), b.secondary, cv::FILLED);
      cv::rectangle(img, cv::Rect(20, header + 14, W / 3, 10), cv::Scalar(255, 255, 255), cv::FILLED);
      draw_text_lines(img, cv::Rect(16, header + H / 3 + 12, W - 32, H - header - H / 3 - 34), rng, text);
      break;
    case 2:  // product grid
      for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 3; ++c) {
          cv::Rect cell(14 + c * (W - 28) / 3, header + 12 + r * 72, (W - 28) / 3 - 10, 60);
          cv::rectangle(img, cell, muted_color(rng), cv::FILLED);
        }
      }
      break;
    default:  // article with sidebar
      cv::rectangle(img, cv::Rect(0, header, 70, H - header), jitter(b.primary, rng, 10) * 0.3 + cv::Scalar(170, 170, 170),
                    cv::FILLED);
      draw_text_lines(img, cv::Rect(86, header + 14, W - 100, H - header - 40), rng, text);
      break;
  }
  cv::rectangle(img, cv::Rect(0, H - 18, W, 18), b.secondary * 0.6, cv::FILLED);
  return img;
}

// Most phishing pages imitate the brand's sign-in page; the rest copy the
// logo onto a layout of the attacker's own making.
cv::Mat phishing_page(const Brand& b, const DeskCorpusOptions& opt, Rng& rng) {
  if (uniform(rng, 0, 9) < 7) return login_page(b, opt, rng, uniform(rng, 8, 30));
  const int W = opt.width, H = opt.height;
  cv::Mat img(H, W, CV_8UC3, light_color(rng));
  const int style = uniform(rng, 0, 2);
  const int icon = uniform(rng, 24, 36);
  const cv::Scalar c1 = jitter(b.secondary, rng, 25), c2 = jitter(b.accent, rng, 25);
  const cv::Scalar word = jitter(b.primary, rng, 25);
  if (style == 0) {  // centred card
    const cv::Rect card(W / 2 - 85, 20, 170, H - 40);
    cv::rectangle(img, card, cv::Scalar(255, 255, 255), cv::FILLED);
    draw_logo(img, b, {card.x + 14, card.y + 10}, icon, c1, c2, word);
    draw_form(img, cv::Rect(card.x + 14, card.y + 30 + icon, card.width - 28, 90), rng, jitter(b.primary, rng, 40));
  } else if (style == 1) {  // split screen
    const int split = uniform(rng, W / 3, W / 2);
    cv::rectangle(img, cv::Rect(0, 0, split, H), muted_color(rng), cv::FILLED);
    draw_logo(img, b, {split + 12, uniform(rng, 12, 40)}, icon, c1, c2, word);
    draw_form(img, cv::Rect(split + 12, 80, W - split - 30, 90), rng, muted_color(rng));
  } else {  // bare form with logo anywhere near the top
    draw_logo(img, b, {uniform(rng, 8, W / 2), uniform(rng, 6, 30)}, icon, c1, c2, word);
    draw_text_lines(img, cv::Rect(16, 80, W / 2 - 20, H - 110), rng, cv::Scalar(110, 110, 110));
    draw_form(img, cv::Rect(W / 2 + 10, 90, W / 2 - 30, 90), rng, muted_color(rng));
  }
  return img;
}

std::string lower_domain(const std::string& wordmark) {
  std::string d;
  for (const char c : wordmark) d.push_back(static_cast<char>(c - 'A' + 'a'));
  return d + ".example";
}

void write_page(const cv::Mat& img, const std::filesystem::path& path) {
  if (!cv::imwrite(path.string(), img)) throw Error(errc::kIo, "cannot write " + path.string());
}

}  // namespace

CorpusManifest generate_desk_corpus(const std::filesystem::path& dir, const DeskCorpusOptions& opt) {
  if (opt.websites < 2 || opt.trusted_per_site < 1 || opt.phishing_per_site < 0 || opt.benign_pages < 0 ||
      opt.benign_brands < 1 || opt.width < 64 || opt.height < 64) {
    throw Error(errc::kInvalidArgument, "invalid desk corpus options");
  }
  std::filesystem::create_directories(dir / "images");
  Rng rng(opt.seed);
  CorpusManifest m;
  m.version = "desk-" + std::to_string(opt.seed);
  std::vector<Brand> brands;
  for (int w = 0; w < opt.websites; ++w) {
    char id[16];
    std::snprintf(id, sizeof(id), "site%02d", w);
    brands.push_back(make_brand(id, rng));
    WebsiteIdentity site;
    site.website_id = id;
    site.name = brands.back().wordmark;
    site.domains = {lower_domain(brands.back().wordmark)};
    site.category = "synthetic";
    m.websites.push_back(site);
  }
  auto add = [&](const std::string& record_id, const std::optional<std::string>& site, SourceClass cls,
                 const cv::Mat& img) {
    const std::filesystem::path rel = std::filesystem::path("images") / (record_id + ".png");
    write_page(img, dir / rel);
    Screenshot s;
    s.record_id = record_id;
    s.image_path = dir / rel;
    s.website_id = site;
    s.source_class = cls;
    m.records.push_back(s);
  };
  char id[32];
  for (const Brand& b : brands) {
    for (int i = 0; i < opt.trusted_per_site; ++i) {
      std::snprintf(id, sizeof(id), "t_%s_%03d", b.id.c_str(), i);
      add(id, b.id, SourceClass::kTrusted, trusted_page(b, opt, rng));
    }
    for (int i = 0; i < opt.phishing_per_site; ++i) {
      std::snprintf(id, sizeof(id), "p_%s_%03d", b.id.c_str(), i);
      add(id, b.id, SourceClass::kPhishing, phishing_page(b, opt, rng));
    }
  }
  std::vector<Brand> others;
  for (int i = 0; i < opt.benign_brands; ++i) others.push_back(make_brand("other" + std::to_string(i), rng));
  for (int i = 0; i < opt.benign_pages; ++i) {
    const Brand& b = others[static_cast<std::size_t>(i % opt.benign_brands)];
    std::snprintf(id, sizeof(id), "b_%03d", i);
    // Benign pages use both page families so layout alone does not separate
    // them from phishing.
    add(id, std::nullopt, SourceClass::kBenignTest, uniform(rng, 0, 1) ? trusted_page(b, opt, rng) : phishing_page(b, opt, rng));
  }
  validate_manifest(m);
  save_manifest(m, dir / "manifest.tsv");
  log_event(LogLevel::kInfo, "desk_corpus", {{"dir", dir.string()}, {"records", m.records.size()}});
  return m;
}

}  // namespace phishmetric
