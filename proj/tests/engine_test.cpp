#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "ecvm/engine.hpp"
#include "ecvm/time.hpp"

namespace ecvm {
namespace {

TEST(SimTimeTest, ArithmeticStaysInMicroseconds) {
  const SimTime boot = SimTime::s(10) + SimTime::ms(360);
  EXPECT_EQ(boot.count(), 10'360'000);
  EXPECT_DOUBLE_EQ(boot.seconds(), 10.36);
  EXPECT_EQ(boot - SimTime::ms(360), SimTime::s(10));
  EXPECT_EQ(SimTime::s(2) / SimTime::ms(500), 4);
  EXPECT_EQ(format_duration(SimTime::us(7)), "7us");
}

TEST(SimTimeTest, SubtractionBelowZeroThrows) {
  EXPECT_THROW(SimTime::us(5) - SimTime::us(6), std::underflow_error);
}

TEST(ParseDurationTest, AcceptsSuffixedLiterals) {
  EXPECT_EQ(parse_duration("7us"), SimTime::us(7));
  EXPECT_EQ(parse_duration("10.36s"), SimTime::us(10'360'000));
  EXPECT_EQ(parse_duration("0.5s"), SimTime::ms(500));
  EXPECT_EQ(parse_duration("100ms"), SimTime::ms(100));
  EXPECT_EQ(parse_duration("42"), SimTime::us(42));  // bare integers are microseconds
}

TEST(ParseDurationTest, RejectsSubMicrosecondAndGarbage) {
  EXPECT_THROW(parse_duration("0.5us"), std::invalid_argument);
  EXPECT_THROW(parse_duration("1.0000005s"), std::invalid_argument);
  EXPECT_THROW(parse_duration("3.5"), std::invalid_argument);  // decimals need a unit
  EXPECT_THROW(parse_duration("-4ms"), std::invalid_argument);
  EXPECT_THROW(parse_duration("fast"), std::invalid_argument);
  EXPECT_THROW(parse_duration(""), std::invalid_argument);
}

TEST(EngineTest, OrdersByTimeThenBySchedulingOrder) {
  Engine engine(1);
  std::vector<std::string> log;
  engine.schedule(SimTime::us(20), EventKind::TaskDone, 0, [&] { log.push_back("late"); });
  engine.schedule(SimTime::us(10), EventKind::BootDone, 0, [&] { log.push_back("boot"); });
  engine.schedule(SimTime::us(10), EventKind::TaskArrival, 1, [&] { log.push_back("arrival"); });
  engine.schedule(SimTime::us(10), EventKind::TaskArrival, 2, [&] { log.push_back("arrival2"); });
  engine.run();
  EXPECT_EQ(log, (std::vector<std::string>{"boot", "arrival", "arrival2", "late"}));
}

TEST(EngineTest, HandlersScheduleFollowups) {
  Engine engine(1);
  std::vector<std::int64_t> times;
  engine.schedule(SimTime::ms(1), EventKind::SamplingTick, 0, [&] {
    times.push_back(engine.now().count());
    engine.schedule(engine.now() + SimTime::ms(1), EventKind::SamplingTick, 0,
                    [&] { times.push_back(engine.now().count()); });
  });
  const SimStats stats = engine.run();
  EXPECT_EQ(times, (std::vector<std::int64_t>{1000, 2000}));
  EXPECT_EQ(stats.events_processed, 2u);
  EXPECT_EQ(stats.final_time, SimTime::ms(2));
}

TEST(EngineTest, CancelledEventsNeverRun) {
  Engine engine(1);
  int runs = 0;
  const EventId doomed = engine.schedule(SimTime::us(5), EventKind::SamplingTick, 0, [&] { ++runs; });
  engine.schedule(SimTime::us(9), EventKind::TaskDone, 0, [&] { ++runs; });
  EXPECT_TRUE(engine.pending(doomed));
  EXPECT_TRUE(engine.cancel(doomed));
  EXPECT_FALSE(engine.cancel(doomed));  // tombstone already set
  EXPECT_FALSE(engine.pending(doomed));
  const SimStats stats = engine.run();
  EXPECT_EQ(runs, 1);
  EXPECT_EQ(stats.events_cancelled, 1u);
  EXPECT_EQ(stats.events_processed, 1u);
}

TEST(EngineTest, SchedulingBeforeNowThrows) {
  Engine engine(1);
  engine.schedule(SimTime::us(10), EventKind::TaskDone, 0, [&] {
    EXPECT_THROW(engine.schedule(SimTime::us(9), EventKind::TaskDone, 0, [] {}), SchedulingInPast);
  });
  engine.run();
}

TEST(EngineTest, HorizonStopsTheClockButKeepsLaterEvents) {
  Engine engine(1);
  int runs = 0;
  engine.schedule(SimTime::s(1), EventKind::TaskDone, 0, [&] { ++runs; });
  engine.schedule(SimTime::s(5), EventKind::TaskDone, 0, [&] { ++runs; });
  const SimStats stats = engine.run(SimTime::s(2));
  EXPECT_EQ(runs, 1);
  EXPECT_EQ(stats.final_time, SimTime::s(2));  // clock advances to the horizon
  EXPECT_EQ(stats.events_processed, 1u);
}

TEST(EngineTest, SeededRngReproduces) {
  Engine a(99);
  Engine b(99);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(a.rng()(), b.rng()());
}

}  // namespace
}  // namespace ecvm
