// Apache License, Version 2.0, refer to LICENSE.txt
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <unordered_map>

#include "symconj/graph.hpp"

namespace symconj {
namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

std::string dims(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::string dump_text(const TermGraph& g) {
  std::ostringstream os;
  for (std::uint32_t i = 0; i < g.size(); ++i) {
    const Node& n = g.node(NodeId{i});
    os << '%' << i << " = ";
    switch (n.kind) {
      case NodeKind::kInput:
        os << "input " << quote(n.name) << " : " << dims(n.shape);
        if (n.support) os << ' ' << to_string(*n.support);
        break;
      case NodeKind::kConstant:
        os << "const : " << dims(n.shape) << " =";
        for (double v : n.value->data()) os << ' ' << format_double(v);
        break;
      case NodeKind::kPrim:
        os << op_name(n.op);
        if (has_attr(n.op)) os << '{' << attr_string(n) << '}';
        os << '(';
        for (std::size_t k = 0; k < n.args.size(); ++k) {
          if (k) os << ", ";
          os << '%' << n.args[k].value;
        }
        os << ") : " << dims(n.shape);
        break;
    }
    os << '\n';
  }
  // Declared input order is not implied by the table when it was reordered.
  os << "inputs";
  for (NodeId in : g.inputs()) os << " %" << in.value;
  os << "\noutput %" << g.output().value << '\n';
  return os.str();
}

std::string dot_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

std::string dump_dot(const TermGraph& g) {
  std::ostringstream os;
  os << "digraph termgraph {\n  rankdir=BT;\n";
  for (NodeId id : g.reachable()) {
    const Node& n = g.node(id);
    std::string label;
    std::string shape = "ellipse";
    switch (n.kind) {
      case NodeKind::kInput:
        label = n.name + "\\n" + dims(n.shape);
        shape = "box";
        break;
      case NodeKind::kConstant:
        label = n.value->size() == 1 ? format_double((*n.value)[0]) : "const " + dims(n.shape);
        shape = "plaintext";
        break;
      case NodeKind::kPrim:
        label = std::string(op_name(n.op));
        if (has_attr(n.op)) label += "\\n" + attr_string(n);
        break;
    }
    os << "  n" << id.value << " [label=\"" << dot_escape(label) << "\", shape=" << shape;
    if (id == g.output()) os << ", peripheries=2";
    os << "];\n";
    for (std::size_t k = 0; k < n.args.size(); ++k) {
      os << "  n" << n.args[k].value << " -> n" << id.value;
      if (n.args.size() > 1) os << " [label=\"" << k << "\"]";
      os << ";\n";
    }
  }
  os << "}\n";
  return os.str();
}

class LineParser {
 public:
  LineParser(std::string_view text, int line) : s_(text), line_(line) {}

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, line_); }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool at_end() {
    skip_ws();
    return pos_ >= s_.size();
  }
  bool accept(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!accept(c)) fail(std::string("expected '") + c + "'");
  }
  std::string word() {
    skip_ws();
    std::size_t start = pos_;
    while (pos_ < s_.size()) {
      const char c = s_[pos_];
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') break;
      ++pos_;
    }
    if (start == pos_) fail("expected a word");
    return std::string(s_.substr(start, pos_ - start));
  }
  std::string rest() {
    skip_ws();
    std::string out(s_.substr(pos_));
    pos_ = s_.size();
    while (!out.empty() && std::isspace(static_cast<unsigned char>(out.back()))) out.pop_back();
    return out;
  }
  std::string label() {
    expect('%');
    std::size_t start = pos_;
    while (pos_ < s_.size() &&
           (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) {
      ++pos_;
    }
    if (start == pos_) fail("expected a node label after '%'");
    return std::string(s_.substr(start, pos_ - start));
  }
  std::string quoted() {
    skip_ws();
    if (pos_ >= s_.size() || s_[pos_] != '"') return word();
    ++pos_;
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != '"') {
      if (s_[pos_] == '\\' && pos_ + 1 < s_.size()) ++pos_;
      out += s_[pos_++];
    }
    if (pos_ >= s_.size()) fail("unterminated string");
    ++pos_;
    return out;
  }
  std::string until(char close) {
    std::size_t start = pos_;
    while (pos_ < s_.size() && s_[pos_] != close) ++pos_;
    if (pos_ >= s_.size()) fail(std::string("missing '") + close + "'");
    std::string out(s_.substr(start, pos_ - start));
    ++pos_;
    return out;
  }
  std::int64_t integer(std::string_view text) const {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      fail("invalid integer '" + std::string(text) + "'");
    }
    return v;
  }
  Shape shape() {
    expect('[');
    std::string body = until(']');
    return int_list(body);
  }
  Shape int_list(std::string_view body) const {
    Shape out;
    std::size_t start = 0;
    std::string trimmed;
    for (char c : body) {
      if (!std::isspace(static_cast<unsigned char>(c))) trimmed += c;
    }
    if (trimmed.empty()) return out;
    while (true) {
      auto comma = trimmed.find(',', start);
      out.push_back(integer(std::string_view(trimmed).substr(
          start, comma == std::string::npos ? std::string::npos : comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return out;
  }
  double number() {
    skip_ws();
    std::size_t start = pos_;
    while (pos_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    std::string tok(s_.substr(start, pos_ - start));
    char* end = nullptr;
    double v = std::strtod(tok.c_str(), &end);
    if (tok.empty() || end != tok.c_str() + tok.size()) fail("invalid number '" + tok + "'");
    return v;
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
  int line_;
};

}  // namespace

std::string dump(const TermGraph& g, DumpFormat format) {
  return format == DumpFormat::kDot ? dump_dot(g) : dump_text(g);
}

TermGraph parse_graph(std::string_view text) {
  GraphBuilder b(false);
  std::unordered_map<std::string, NodeId> labels;
  std::optional<NodeId> output;
  std::vector<std::string> input_order;
  bool have_order = false;
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    std::string_view line =
        text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    LineParser p(line, line_no);
    if (p.at_end() || p.accept('#')) continue;

    auto lookup = [&](const std::string& l) {
      auto it = labels.find(l);
      if (it == labels.end()) p.fail("undefined node %" + l);
      return it->second;
    };

    if (p.accept('%')) {
      // Re-parse the label including the consumed '%'.
      LineParser q(line, line_no);
      const std::string label = q.label();
      if (labels.contains(label)) q.fail("duplicate node %" + label);
      q.expect('=');
      const std::string head = q.word();
      try {
        if (head == "input") {
          std::string name = q.quoted();
          q.expect(':');
          Shape shape = q.shape();
          std::optional<SupportType> support;
          if (!q.at_end()) {
            std::string tag = q.rest();
            support = parse_support(tag);
            if (!support) q.fail("unknown support '" + tag + "'");
          }
          if (b.find_input(name)) q.fail("duplicate input '" + name + "'");
          labels[label] = b.input(name, shape, support).id();
        } else if (head == "const") {
          q.expect(':');
          Shape shape = q.shape();
          q.expect('=');
          std::vector<double> values;
          while (!q.at_end()) values.push_back(q.number());
          if (static_cast<std::int64_t>(values.size()) != num_elements(shape)) {
            q.fail("constant has " + std::to_string(values.size()) + " values for shape " +
                   shape_to_string(shape));
          }
          labels[label] = b.constant(Tensor(shape, std::move(values))).id();
        } else {
          auto op = op_from_name(head);
          if (!op) q.fail("unknown primitive '" + head + "'");
          Attrs attrs;
          if (q.accept('{')) {
            std::string body = q.until('}');
            switch (*op) {
              case Op::kEinsum: attrs.formula = body; break;
              case Op::kOneHot: attrs.depth = q.integer(body); break;
              case Op::kSumAxis:
              case Op::kLogsumexp: attrs.axis = q.integer(body); break;
              case Op::kBroadcastTo: attrs.shape = q.int_list(body); break;
              default: q.fail("primitive '" + head + "' takes no attribute");
            }
          } else if (has_attr(*op)) {
            q.fail("primitive '" + head + "' needs an attribute");
          }
          q.expect('(');
          std::vector<NodeId> args;
          if (!q.accept(')')) {
            do {
              args.push_back(lookup(q.label()));
            } while (q.accept(','));
            q.expect(')');
          }
          q.expect(':');
          Shape declared = q.shape();
          NodeId id = b.prim_id(*op, std::move(args), std::move(attrs));
          if (b.node(id).shape != declared) {
            q.fail("declared shape " + shape_to_string(declared) + " but inferred " +
                   shape_to_string(b.node(id).shape));
          }
          labels[label] = id;
        }
      } catch (const ParseError&) {
        throw;
      } catch (const Error& e) {
        throw ParseError(e.what(), line_no);
      }
      if (!q.at_end()) q.fail("trailing characters");
      continue;
    }

    const std::string kw = p.word();
    if (kw == "output") {
      if (output) p.fail("duplicate output line");
      output = lookup(p.label());
      if (!p.at_end()) p.fail("trailing characters");
    } else if (kw == "inputs") {
      have_order = true;
      while (!p.at_end()) {
        NodeId id = lookup(p.label());
        if (!b.node(id).is_input()) p.fail("inputs line names a non-input node");
        input_order.push_back(b.node(id).name);
      }
    } else {
      p.fail("unexpected '" + kw + "'");
    }
  }
  if (!output) throw ParseError("missing output line", line_no);
  return b.finish(b.wrap(*output), have_order ? input_order : std::vector<std::string>{});
}

}  // namespace symconj
