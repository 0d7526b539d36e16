#include "assoc/model.h"

#include <cctype>

namespace assoc {

namespace {

class Cursor {
 public:
  explicit Cursor(const std::string& text) : text_(text) {}

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool done() {
    skip_ws();
    return pos_ >= text_.size();
  }

  char peek() {
    skip_ws();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }

  void expect(char c) {
    skip_ws();
    if (pos_ >= text_.size() || text_[pos_] != c)
      throw ParseError(std::string("expected '") + c + "' at position " + std::to_string(pos_) +
                       " in architecture string");
    ++pos_;
  }

  bool consume(const std::string& word) {
    skip_ws();
    if (text_.compare(pos_, word.size(), word) == 0) {
      pos_ += word.size();
      return true;
    }
    return false;
  }

  int integer(const char* what) {
    skip_ws();
    std::size_t start = pos_;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (pos_ == start)
      throw ParseError(std::string("expected ") + what + " at position " + std::to_string(start) +
                       " in architecture string");
    long v = std::stol(text_.substr(start, pos_ - start));
    if (v < 1)
      throw ParseError(std::string(what) + " must be positive at position " +
                       std::to_string(start));
    return static_cast<int>(v);
  }

  std::size_t pos() {
    skip_ws();
    return pos_;
  }

 private:
  const std::string& text_;
  std::size_t pos_ = 0;
};

}  // namespace

ModelSpec parse_architecture(const std::string& text) {
  Cursor cur(text);
  ModelSpec spec;
  bool saw_fc = false;
  if (cur.done()) throw ParseError("empty architecture string");
  while (true) {
    std::size_t at = cur.pos();
    LayerDesc layer;
    if (cur.consume("FC")) {
      layer.kind = LayerDesc::Kind::kFc;
      cur.expect('(');
      layer.units = cur.integer("unit count");
      cur.expect(')');
      saw_fc = true;
    } else if (cur.consume("C")) {
      layer.kind = LayerDesc::Kind::kConv;
      cur.expect('(');
      layer.units = cur.integer("filter count");
      cur.expect(',');
      layer.window = cur.integer("kernel extent");
      if (cur.peek() == ',') {
        cur.expect(',');
        if (!cur.consume("stride"))
          throw ParseError("expected 'stride=' at position " + std::to_string(cur.pos()));
        cur.expect('=');
        layer.stride = cur.integer("stride");
      }
      cur.expect(')');
    } else if (cur.consume("P")) {
      layer.kind = LayerDesc::Kind::kPool;
      cur.expect('(');
      layer.window = cur.integer("pool window");
      layer.stride = layer.window;  // stride defaults to the window
      if (cur.peek() == ',') {
        cur.expect(',');
        layer.stride = cur.integer("pool stride");
      }
      cur.expect(')');
    } else {
      throw ParseError("unknown layer at position " + std::to_string(at) +
                       " in architecture string (expected C, P or FC)");
    }
    if (saw_fc && layer.kind != LayerDesc::Kind::kFc)
      throw ParseError("convolution or pooling after an FC layer at position " +
                       std::to_string(at));
    spec.layers.push_back(layer);
    if (cur.done()) break;
    std::size_t sep = cur.pos();
    if (!cur.consume("->"))
      throw ParseError("expected '->' at position " + std::to_string(sep) +
                       " in architecture string");
  }
  if (spec.layers.back().kind != LayerDesc::Kind::kFc)
    throw ParseError("architecture must end with an FC embedding layer");
  spec.embedding_dim = spec.layers.back().units;
  return spec;
}

std::string render_architecture(const ModelSpec& spec) {
  std::string out;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& l = spec.layers[i];
    if (i) out += "->";
    switch (l.kind) {
      case LayerDesc::Kind::kConv:
        out += "C(" + std::to_string(l.units) + "," + std::to_string(l.window);
        if (l.stride != 1) out += ",stride=" + std::to_string(l.stride);
        out += ")";
        break;
      case LayerDesc::Kind::kPool:
        out += "P(" + std::to_string(l.window);
        if (l.stride != l.window) out += "," + std::to_string(l.stride);
        out += ")";
        break;
      case LayerDesc::Kind::kFc:
        out += "FC(" + std::to_string(l.units) + ")";
        break;
    }
  }
  return out;
}

}  // namespace assoc
