from gfne.iterlog import IterationLog, MajorRecord, MinorRow


def table_one_like_log():
    lg = IterationLog(row_counts={(100, 0): 1, (100, 1): 1, (3, 0): 2})
    m1 = MajorRecord(1, [MinorRow("F1", []), MinorRow("F2", [(100, 1, 0)]),
                         MinorRow("1", [(100, 0, 0), (100, 1, 0)], "drop (101,1)"),
                         MinorRow("2", [(100, 1, 0)], "cycle")], alpha=1.0, merit=96.25)
    m2 = MajorRecord(2, [MinorRow("F1", [(3, 0, 1)]), MinorRow("1", [(3, 0, 1)], "solution")],
                     alpha=1.0, merit=2.3e-5)
    lg.majors = [m1, m2]
    lg.total_time, lg.solve_time, lg.eval_time = 5.144, 0.97, 4.17
    return lg


def test_columns_and_labels():
    text = table_one_like_log().to_text()
    lines = text.splitlines()
    assert lines[0].split() == ["major", "minor", "working", "set", "comment", "alpha", "merit"]
    assert "{(101,2)}" in text and "{(101,1),(101,2)}" in text
    assert "{(4,1,2)}" in text          # rows are only collapsed when a player has one row there
    row = next(s for s in lines if "cycle" in s)
    assert row.split()[-2:] == ["1", "96.25"]


def test_footer():
    lg = table_one_like_log()
    text = lg.to_text()
    assert "Total LQ Solves: 6" in text
    assert text.rstrip().endswith("Total Time: 5.14  Solve Time: 0.97  Function Eval Time: 4.17")
    assert "Total Time" not in lg.to_text(timing=False)


def test_merit_only_on_last_minor_row():
    lines = table_one_like_log().to_text().splitlines()
    f1 = next(s for s in lines if s.startswith("1 "))
    assert "96.25" not in f1
