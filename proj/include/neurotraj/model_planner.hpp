#pragma once

// Closed-loop planner backed by a trained driving model.

#include "neurotraj/driving_model.hpp"
#include "neurotraj/simulator.hpp"

#include <memory>

namespace neurotraj {

class ModelPlanner final : public Planner {
 public:
  explicit ModelPlanner(std::shared_ptr<const DrivingModel> model, GenerationConfig cfg = {})
      : model_(std::move(model)), cfg_(std::move(cfg)) {
    if (!model_) throw Error("model planner needs a model");
    cfg_.grid = model_->config().grid;
  }

  ContinuousTrajectory plan(const PlanRequest& req) override {
    return model_->infer(render_request_window(req, cfg_), std::clamp(req.state.v, 0.0, kMaxSpeed));
  }

  std::string name() const override { return std::string("model:") + to_string(model_->ablation()); }

 private:
  std::shared_ptr<const DrivingModel> model_;
  GenerationConfig cfg_;
};

}  // namespace neurotraj
