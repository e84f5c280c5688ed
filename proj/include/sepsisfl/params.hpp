#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sepsisfl/digest.hpp"
#include "sepsisfl/numcore.hpp"

namespace sepsisfl::model {

// Fixed, named segmentation of the flat parameter vector. Byte layout of the
// serialized form: 32-byte layout digest, then size() doubles little-endian.
class ParamLayout {
  public:
    struct Segment {
        std::string name;
        std::vector<int> shape;
        std::size_t offset = 0;
        std::size_t size = 0;
    };

    static std::shared_ptr<const ParamLayout> make(
        std::vector<std::pair<std::string, std::vector<int>>> segments);

    std::size_t size() const { return total_; }
    const std::vector<Segment>& segments() const { return segments_; }
    const Segment& segment(std::string_view name) const;
    bool has(std::string_view name) const;
    const Digest& digest() const { return digest_; }

  private:
    std::vector<Segment> segments_;
    std::size_t total_ = 0;
    Digest digest_{};
};

using LayoutPtr = std::shared_ptr<const ParamLayout>;

class ParamVector {
  public:
    ParamVector() = default;
    explicit ParamVector(LayoutPtr layout)
        : layout_(std::move(layout)), flat_(layout_->size(), 0.0) {}
    ParamVector(LayoutPtr layout, std::vector<double> flat);

    const LayoutPtr& layout() const { return layout_; }
    std::size_t size() const { return flat_.size(); }

    std::vector<double>& flat() { return flat_; }
    const std::vector<double>& flat() const { return flat_; }

    std::span<double> seg(std::string_view name);
    std::span<const double> seg(std::string_view name) const;
    numcore::Tensor seg_tensor(std::string_view name) const;
    void set_seg(std::string_view name, const numcore::Tensor& t);

    void fill(double v) { std::fill(flat_.begin(), flat_.end(), v); }
    bool same_layout(const ParamVector& other) const;

    std::vector<unsigned char> serialize() const;
    static ParamVector deserialize(LayoutPtr layout, std::span<const unsigned char> bytes);

  private:
    LayoutPtr layout_;
    std::vector<double> flat_;
};

}  // namespace sepsisfl::model
